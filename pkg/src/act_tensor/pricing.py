"""Portfolio sorts, partial Tucker factors and factor-based return forecasts.

Pipeline: double-sorted value-weighted baskets -> P x Q x (L-1) x T excess
return tensor -> HOSVD loadings on the three portfolio modes -> stacked
factor series -> forward stepwise selection -> per-portfolio regressions.
"""
from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, StructuralError, UndefinedMetricError

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class MarketData:
    """Monthly returns, market caps (both T x N) and the risk-free rate.

    NaN marks a missing return or cap. A firm with a zero, negative or
    missing cap at month t carries no weight at t.
    """

    returns: np.ndarray
    mcap: np.ndarray
    risk_free: np.ndarray
    months: tuple = None
    firms: tuple = None

    def __post_init__(self):
        r = np.array(self.returns, dtype=float)
        w = np.array(self.mcap, dtype=float)
        rf = np.array(self.risk_free, dtype=float).reshape(-1)
        if r.ndim != 2 or w.shape != r.shape:
            raise StructuralError(f"returns {r.shape} and mcap {w.shape} must be equal T x N matrices")
        if rf.shape[0] != r.shape[0]:
            raise StructuralError(f"risk-free series has {rf.shape[0]} months, returns have {r.shape[0]}")
        if np.any(w[np.isfinite(w)] < 0):
            raise StructuralError("market capitalization must be nonnegative")
        object.__setattr__(self, "returns", r)
        object.__setattr__(self, "mcap", w)
        object.__setattr__(self, "risk_free", rf)
        if self.months is not None:
            object.__setattr__(self, "months", tuple(self.months))
        if self.firms is not None:
            object.__setattr__(self, "firms", tuple(self.firms))


@dataclass(frozen=True, eq=False)
class ReturnTensor:
    """P x Q x (L-1) x T excess returns; NaN marks an empty basket.

    `counts` holds the number of firms in each basket, so an empty basket
    is ``counts == 0``, never a silent zero.
    """

    values: np.ndarray
    counts: np.ndarray
    characteristics: tuple = ()

    @property
    def empty(self) -> np.ndarray:
        return self.counts == 0

    def filled(self) -> np.ndarray:
        """Empty baskets replaced by their own time-series mean, else 0."""
        v = self.values
        with np.errstate(invalid="ignore"), warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)  # never-populated baskets
            mean = np.nanmean(np.where(self.empty, np.nan, v), axis=-1, keepdims=True)
        mean = np.nan_to_num(mean)
        return np.where(self.empty, np.broadcast_to(mean, v.shape), v)

    def portfolio_matrix(self) -> np.ndarray:
        """Filled returns as an (P*Q*(L-1)) x T matrix, p slowest."""
        v = self.filled()
        return v.reshape(-1, v.shape[-1])


def quantile_buckets(values, ids, n_buckets: int) -> np.ndarray:
    """Bucket index in [0, n_buckets) from rank order.

    Ties in `values` are broken by `ids` (ascending). With n members the
    member of rank i (0-based) lands in ``floor(i * n_buckets / n)``.
    """
    values = np.asarray(values, dtype=float)
    n = values.size
    order = np.lexsort((np.asarray(ids), values))
    ranks = np.empty(n, dtype=int)
    ranks[order] = np.arange(n)
    return (ranks * n_buckets) // max(n, 1)


def build_return_tensor(panel, market: MarketData, p_buckets: int = 20, q_buckets: int = 20,
                        size_index: int = 0, firm_ids=None, characteristics=None) -> ReturnTensor:
    """Double-sort firms every month and value-weight their excess returns.

    Parameters
    ----------
    panel : array_like, shape (T, N, L)
        Completed characteristic panel.
    market : MarketData
    p_buckets, q_buckets : int
        Size buckets and within-size characteristic buckets.
    size_index : int
        Position of the size characteristic along the last axis.
    firm_ids : sequence, optional
        Tie-break keys; default is the firm position.
    """
    panel = np.asarray(panel, dtype=float)
    T, N, L = panel.shape
    if market.returns.shape != (T, N):
        raise StructuralError(f"market data is {market.returns.shape}, panel is {(T, N)}")
    if not 0 <= size_index < L:
        raise ConfigError(f"size characteristic index {size_index} outside 0..{L - 1}")
    if p_buckets < 1 or q_buckets < 1:
        raise ConfigError("bucket counts must be positive")
    ids = np.arange(N) if firm_ids is None else np.asarray(firm_ids)
    # firm ids may be strings: turn them into sortable integer keys
    ids = np.unique(ids, return_inverse=True)[1]
    others = [l for l in range(L) if l != size_index]
    sums = np.zeros((p_buckets, q_buckets, len(others), T))
    weights = np.zeros_like(sums)
    counts = np.zeros(sums.shape, dtype=int)

    for t in range(T):
        r = market.returns[t]
        w = market.mcap[t]
        live = np.isfinite(r) & np.isfinite(w) & (w > 0) & np.all(np.isfinite(panel[t]), axis=1)
        idx = np.flatnonzero(live)
        if idx.size == 0:
            continue
        p_of = quantile_buckets(panel[t, idx, size_index], ids[idx], p_buckets)
        for p in range(p_buckets):
            members = idx[p_of == p]
            if members.size == 0:
                continue
            for j, l in enumerate(others):
                q_of = quantile_buckets(panel[t, members, l], ids[members], q_buckets)
                np.add.at(sums[p, :, j, t], q_of, w[members] * r[members])
                np.add.at(weights[p, :, j, t], q_of, w[members])
                np.add.at(counts[p, :, j, t], q_of, 1)

    with np.errstate(invalid="ignore", divide="ignore"):
        values = sums / weights - market.risk_free[None, None, None, :]
    values[counts == 0] = np.nan
    names = tuple(characteristics[l] for l in others) if characteristics is not None else ()
    return ReturnTensor(values=values, counts=counts, characteristics=names)


def _leading_left_vectors(matrix: np.ndarray, k: int) -> np.ndarray:
    u, _, _ = np.linalg.svd(matrix, full_matrices=False)
    u = u[:, :k]
    # sign convention: largest-magnitude entry of each column is positive
    pivot = u[np.argmax(np.abs(u), axis=0), np.arange(u.shape[1])]
    return u * np.where(pivot < 0, -1.0, 1.0)


def hosvd_partial_tucker(r, ranks=(5, 5, 5)):
    """HOSVD on the three portfolio modes, time left unfactored.

    Parameters
    ----------
    r : ReturnTensor or ndarray, shape (P, Q, C, T)
        Empty baskets are filled first (see ReturnTensor.filled).
    ranks : (k_p, k_q, k_c)

    Returns
    -------
    core : ndarray, shape (k_p, k_q, k_c, T)
    loadings : list of three matrices with orthonormal columns
    """
    values = r.filled() if isinstance(r, ReturnTensor) else np.asarray(r, dtype=float)
    if values.ndim != 4:
        raise StructuralError(f"expected a 4-D return tensor, got shape {values.shape}")
    if np.any(~np.isfinite(values)):
        raise StructuralError("return tensor has non-finite entries; fill empty baskets first")
    ranks = tuple(int(k) for k in ranks)
    if len(ranks) != 3:
        raise ConfigError(f"need three mode ranks, got {ranks}")
    loadings = []
    for mode, k in enumerate(ranks):
        dim = values.shape[mode]
        if not 1 <= k <= dim:
            raise ConfigError(f"rank {k} for mode {mode} must lie in 1..{dim}")
        unfolded = np.moveaxis(values, mode, 0).reshape(dim, -1)
        loadings.append(_leading_left_vectors(unfolded, k))
    U, V, W = loadings
    core = np.einsum("pqct,pi,qj,ck->ijkt", values, U, V, W, optimize=True)
    return core, loadings


def tucker_reconstruct(core, loadings) -> np.ndarray:
    U, V, W = loadings
    return np.einsum("ijkt,pi,qj,ck->pqct", core, U, V, W, optimize=True)


def stack_factors(core) -> np.ndarray:
    """Flatten (p, q, c) core indices into one factor axis, p slowest."""
    core = np.asarray(core)
    return core.reshape(-1, core.shape[-1])


def unstack_factors(factors, ranks) -> np.ndarray:
    factors = np.asarray(factors)
    return factors.reshape(*ranks, factors.shape[-1])


def _design(factors: np.ndarray, subset) -> np.ndarray:
    """Regressors for r[:, t+1]: a constant and f_t for t = 0..T-2."""
    f = factors[list(subset), :-1].T
    return np.column_stack([np.ones(factors.shape[1] - 1), f])


def _ols(design: np.ndarray, targets: np.ndarray):
    """Coefficients (cols x N) by pseudo-inverse, and a rank-deficiency flag."""
    coef = np.linalg.pinv(design) @ targets
    deficient = np.linalg.matrix_rank(design) < design.shape[1]
    return coef, bool(deficient)


def cross_sectional_r2(factors, returns, subset) -> float:
    """Pseudo cross-sectional R^2 of the regression of r[n, t+1] on f_t[subset].

    ``1 - mean(alpha_n^2) / Var_n(mean_t r[n, t+1])`` with the population
    variance across portfolios.
    """
    factors = np.asarray(factors, dtype=float)
    returns = np.asarray(returns, dtype=float)
    targets = returns[:, 1:].T
    coef, _ = _ols(_design(factors, subset), targets)
    alpha = coef[0]
    spread = np.var(targets.mean(axis=0))
    if spread == 0:
        raise UndefinedMetricError("portfolio mean returns have no cross-sectional variance")
    return 1.0 - np.mean(alpha ** 2) / spread


def stepwise_select(factors, portfolio_returns, target_size: int = 6):
    """Greedy forward selection maximizing the pseudo cross-sectional R^2.

    Returns the ordered list of selected factor indices and the R^2 after
    each addition. Ties go to the lower factor index.
    """
    factors = np.asarray(factors, dtype=float)
    returns = np.asarray(portfolio_returns, dtype=float)
    k, T = factors.shape
    if returns.shape[1] != T:
        raise StructuralError(f"factors span {T} months, returns span {returns.shape[1]}")
    if not 1 <= target_size <= k:
        raise ConfigError(f"target size {target_size} must lie in 1..{k}")
    if T <= target_size + 1:
        raise ConfigError(f"{T} months is too short for {target_size} factors plus an intercept")
    if np.var(returns[:, 1:].mean(axis=1)) == 0:
        raise UndefinedMetricError("portfolio mean returns have no cross-sectional variance")
    chosen, path = [], []
    for _ in range(target_size):
        best, best_r2 = None, -np.inf
        for j in range(k):
            if j in chosen:
                continue
            r2 = cross_sectional_r2(factors, returns, chosen + [j])
            if r2 > best_r2:
                best, best_r2 = j, r2
        chosen.append(best)
        path.append(float(best_r2))
    return chosen, path


@dataclass
class FactorModel:
    """Fitted forecasting regressions.

    `alphas` (N,), `betas` (N x |selected|) and `residuals`
    (N x (T-1)) come from regressing r[n, t+1] on f_t[selected].
    """

    factors: np.ndarray
    selected: list
    alphas: np.ndarray
    betas: np.ndarray
    residuals: np.ndarray
    fitted: np.ndarray
    rank_deficient: bool = False
    loadings: list = field(default_factory=list)


def fit_and_forecast(factors, selected, portfolio_returns, loadings=None, expanding: int | None = None):
    """OLS of next-month returns on the selected factors, with forecasts.

    In-sample by default: forecasts ``alpha + beta' f_t`` for every
    regression month t = 0..T-2, aligned with ``returns[:, 1:]``. With
    ``expanding=m`` each month t >= m is instead forecast from a fit on the
    pairs available before it, and the first m forecast columns are NaN.

    Returns
    -------
    model : FactorModel
    forecasts : ndarray, shape (N, T-1)
    """
    factors = np.asarray(factors, dtype=float)
    returns = np.asarray(portfolio_returns, dtype=float)
    selected = list(selected)
    if not selected:
        raise ConfigError("need at least one selected factor")
    design = _design(factors, selected)
    targets = returns[:, 1:].T
    coef, deficient = _ols(design, targets)
    if deficient:
        logger.info("factor design is rank deficient; pseudo-inverse solution used")
    fitted = (design @ coef).T
    model = FactorModel(
        factors=factors,
        selected=selected,
        alphas=coef[0].copy(),
        betas=coef[1:].T.copy(),
        residuals=returns[:, 1:] - fitted,
        fitted=fitted,
        rank_deficient=deficient,
        loadings=list(loadings or []),
    )
    if expanding is None:
        return model, fitted.copy()
    m = int(expanding)
    if m < 1:
        raise ConfigError("expanding window needs at least one training month")
    forecasts = np.full(fitted.shape, np.nan)
    for t in range(m, design.shape[0]):
        c, _ = _ols(design[:t], targets[:t])
        forecasts[:, t] = design[t] @ c
    return model, forecasts
