"""Imputation accuracy on held-out cells."""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .errors import StructuralError
from .masking import HoldoutPlan


@dataclass(frozen=True)
class ImputationScores:
    """RMSE, MAE, MAPE and R^2 over the held-out cells.

    `r2` is None when every true value is identical. `mape` skips cells
    whose true value is exactly zero; `mape_excluded` counts them, and
    `mape` is None when all cells were excluded.
    """

    rmse: float
    mae: float
    mape: float | None
    r2: float | None
    n_cells: int
    mape_excluded: int

    def as_dict(self) -> dict:
        return asdict(self)


def score_arrays(truth, pred) -> ImputationScores:
    truth = np.asarray(truth, dtype=float).reshape(-1)
    pred = np.asarray(pred, dtype=float).reshape(-1)
    if truth.size == 0:
        raise StructuralError("cannot score an empty holdout plan")
    if truth.shape != pred.shape:
        raise StructuralError(f"{truth.size} true values against {pred.size} predictions")
    err = truth - pred
    sse = float(err @ err)
    nonzero = truth != 0
    dev = truth - truth.mean()
    sst = float(dev @ dev)
    return ImputationScores(
        rmse=float(np.sqrt(sse / truth.size)),
        mae=float(np.mean(np.abs(err))),
        mape=float(np.mean(np.abs(err[nonzero] / truth[nonzero]))) if nonzero.any() else None,
        r2=1.0 - sse / sst if sst > 0 else None,
        n_cells=int(truth.size),
        mape_excluded=int(np.sum(~nonzero)),
    )


def score(imputed, plan: HoldoutPlan) -> ImputationScores:
    """Score a dense imputed T x N x L array on the cells listed in `plan`."""
    imputed = np.asarray(imputed, dtype=float)
    if len(plan) == 0:
        raise StructuralError("cannot score an empty holdout plan")
    return score_arrays(plan.values, imputed[plan.index])
