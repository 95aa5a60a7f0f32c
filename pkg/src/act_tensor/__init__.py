"""Cluster-based CP tensor completion for sparse firm-characteristic panels."""
from .baselines import impute_cp, impute_median
from .clustering import ClusterPartition, cluster_firms, kmeans
from .cp import FitReport, SolverConfig, fit_cp
from .errors import (
    ActTensorError,
    ConfigError,
    EmptyObservationError,
    ParseError,
    StructuralError,
    UnderdeterminedError,
    UndefinedMetricError,
)
from .masking import HoldoutPlan, apply_plan, make_plan, mask_block, mask_logit, mask_mar
from .metrics import ImputationScores, score
from .pipeline import ActConfig, RunReport, run_act
from .pricing import MarketData, ReturnTensor, build_return_tensor, fit_and_forecast, hosvd_partial_tucker, stepwise_select
from .pricing_metrics import pricing_scores
from .smoothing import SmootherSpec, smooth_tensor
from .tensor import CpModel, MaskedTensor, reconstruct

__version__ = "0.1.0"
