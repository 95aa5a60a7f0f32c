"""Masked CP completion by alternating least squares.

Each mode update solves one small ridge least-squares problem per row of the
factor, restricted to the observed cells of that row's slice. Every update is
an exact block minimizer, so the objective never goes up.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, EmptyObservationError, StructuralError, UnderdeterminedError
from .tensor import CpModel, MaskedTensor, _mode_index, khatri_rao_rest, reconstruct, unfold

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class SolverConfig:
    rank: int = 40
    lam: float = 0.0
    max_iters: int = 200
    rel_tol: float = 1e-6
    seed: int = 0

    def __post_init__(self):
        if int(self.rank) != self.rank or self.rank < 1:
            raise ConfigError(f"rank must be a positive integer, got {self.rank}")
        if not self.lam >= 0:
            raise ConfigError(f"lambda must be nonnegative, got {self.lam}")
        if int(self.max_iters) != self.max_iters or self.max_iters < 1:
            raise ConfigError(f"max_iters must be a positive integer, got {self.max_iters}")
        if not self.rel_tol > 0:
            raise ConfigError(f"rel_tol must be positive, got {self.rel_tol}")


@dataclass
class FitReport:
    objective: float
    trace: list = field(default_factory=list)
    iterations: int = 0
    converged: bool = False
    pinv_rows: int = 0  # rows solved on a rank-deficient normal matrix

    def as_dict(self) -> dict:
        return {
            "objective": self.objective,
            "iterations": self.iterations,
            "converged": self.converged,
            "pinv_rows": self.pinv_rows,
        }


def objective(x: MaskedTensor, model: CpModel, lam: float = 0.0) -> float:
    """Masked squared error plus ``lam`` times the squared factor norms."""
    resid = x.values[x.mask] - reconstruct(model)[x.mask]
    value = float(resid @ resid)
    if lam:
        value += lam * sum(float(np.sum(f * f)) for f in model.factors())
    return value


def init_model(shape, rank: int, rng: np.random.Generator) -> CpModel:
    """Factors drawn i.i.d. uniform on [-0.5, 0.5]."""
    T, N, L = shape
    return CpModel(
        rng.uniform(-0.5, 0.5, (T, rank)),
        rng.uniform(-0.5, 0.5, (N, rank)),
        rng.uniform(-0.5, 0.5, (L, rank)),
    )


def _solve_rows(gram: np.ndarray, rhs: np.ndarray):
    """Minimum-norm solutions of a batch of symmetric PSD systems.

    Returns the solutions and the number of systems that were numerically
    rank deficient (eigenvalues cut at the lstsq default cutoff).
    """
    evals, evecs = np.linalg.eigh(gram)
    R = gram.shape[-1]
    cutoff = R * np.finfo(float).eps * np.maximum(evals[:, -1:], 0.0)
    keep = evals > cutoff
    inv = np.where(keep, 1.0 / np.where(keep, evals, 1.0), 0.0)
    coef = np.einsum("irs,ir->is", evecs, rhs)
    sol = np.einsum("irs,is->ir", evecs, coef * inv)
    deficient = int(np.sum(~keep.all(axis=1)))
    return sol, deficient


def als_sweep_mode(x: MaskedTensor, model: CpModel, mode, lam: float = 0.0, stats: dict | None = None) -> np.ndarray:
    """Return the exact row-wise minimizer of one factor, others held fixed.

    Row i of the returned matrix minimizes
    ``sum over observed cells of slice i of (x - xhat)^2 + lam * ||row||^2``.
    Rows whose slice has no observed cell are copied unchanged when
    ``lam == 0`` and set to zero (the ridge solution) when ``lam > 0``.
    """
    if x.shape != model.shape:
        raise StructuralError(f"tensor shape {x.shape} != model shape {model.shape}")
    k = _mode_index(mode)
    R = model.rank
    Z = khatri_rao_rest(model, k)
    M = unfold(x.mask, k).astype(float)
    X = unfold(x.filled(0.0), k)

    gram = (M @ (Z[:, :, None] * Z[:, None, :]).reshape(-1, R * R)).reshape(-1, R, R)
    if lam:
        gram = gram + lam * np.eye(R)
    rhs = X @ Z
    new, deficient = _solve_rows(gram, rhs)

    counts = M.sum(axis=1)
    empty = counts == 0
    if lam == 0 and np.any(empty):
        new[empty] = model.factors()[k][empty]
        deficient -= int(np.sum(empty))
    if stats is not None:
        stats["pinv_rows"] = stats.get("pinv_rows", 0) + deficient
    return new


def fit_cp(x: MaskedTensor, cfg: SolverConfig = SolverConfig(), seed=None):
    """Fit a rank-``cfg.rank`` CP model to the observed cells of `x`.

    Parameters
    ----------
    x : MaskedTensor
    cfg : SolverConfig
    seed : int or numpy.random.SeedSequence, optional
        Overrides ``cfg.seed``. Callers that split one seed into several
        independent streams pass a SeedSequence here.

    Returns
    -------
    model : CpModel
    report : FitReport
        ``trace[i]`` is the objective after sweep ``i + 1``.
    """
    n_obs = x.n_observed
    if n_obs == 0:
        raise EmptyObservationError("cannot fit a CP model to a tensor with no observed entries")
    if n_obs < cfg.rank:
        raise UnderdeterminedError(
            f"{n_obs} observed entries for rank {cfg.rank}; lower the rank to at most {n_obs}"
        )
    rng = np.random.default_rng(cfg.seed if seed is None else seed)
    model = init_model(x.shape, cfg.rank, rng)

    stats: dict = {}
    prev = objective(x, model, cfg.lam)
    report = FitReport(objective=prev)
    for it in range(cfg.max_iters):
        for k in range(3):
            model = model.replace_factor(k, als_sweep_mode(x, model, k, cfg.lam, stats))
        obj = objective(x, model, cfg.lam)
        report.trace.append(obj)
        report.iterations = it + 1
        if abs(prev - obj) / (1.0 + prev) < cfg.rel_tol:
            report.converged = True
            prev = obj
            break
        prev = obj
    report.objective = prev
    report.pinv_rows = stats.get("pinv_rows", 0)
    if report.pinv_rows:
        logger.debug("pseudo-inverse used on %d row solves", report.pinv_rows)
    return model, report
