"""Pricing-error and predictive-power metrics over portfolio forecasts.

Forecast and realized inputs are N x T' matrices: one row per portfolio,
one column per forecast month.
"""
from __future__ import annotations

import logging
import warnings
from dataclasses import asdict, dataclass

import numpy as np
from scipy.stats import rankdata

from .errors import StructuralError

logger = logging.getLogger(__name__)


def alpha_errors(alphas) -> dict:
    """Root-mean-square and mean-absolute pricing error."""
    a = np.asarray(getattr(alphas, "alphas", alphas), dtype=float)
    return {
        "rmse_alpha": float(np.sqrt(np.mean(a * a))),
        "mae_alpha": float(np.mean(np.abs(a))),
    }


def _pair(forecasts, realized):
    f = np.asarray(forecasts, dtype=float)
    r = np.asarray(realized, dtype=float)
    if f.shape != r.shape or f.ndim != 2:
        raise StructuralError(f"forecasts {f.shape} and realized {r.shape} must be equal N x T' matrices")
    if f.shape[1] == 0:
        raise StructuralError("no forecast months")
    return f, r


def _usable_months(f, r):
    return np.all(np.isfinite(f), axis=0) & np.all(np.isfinite(r), axis=0)


def mae_rank(forecasts, realized) -> float:
    """Mean over months of the mean absolute rank gap (rank 1 = highest)."""
    f, r = _pair(forecasts, realized)
    cols = _usable_months(f, r)
    if not cols.any():
        raise StructuralError("no month has complete forecasts and realizations")
    rank_f = rankdata(-f[:, cols], axis=0)
    rank_r = rankdata(-r[:, cols], axis=0)
    return float(np.mean(np.abs(rank_r - rank_f)))


def information_coefficient(forecasts, realized):
    """Mean cross-sectional Pearson correlation across months.

    Months where either side has no cross-sectional variation are skipped.
    Returns ``(ic, skipped_months)``; ic is None if every month is skipped.
    """
    f, r = _pair(forecasts, realized)
    cols = _usable_months(f, r)
    f, r = f[:, cols], r[:, cols]
    fd = f - f.mean(axis=0)
    rd = r - r.mean(axis=0)
    sf = np.sqrt(np.sum(fd * fd, axis=0))
    sr = np.sqrt(np.sum(rd * rd, axis=0))
    ok = (sf > 0) & (sr > 0)
    skipped = int(np.sum(~ok)) + int(np.sum(~cols))
    if not ok.any():
        return None, skipped
    corr = np.sum(fd[:, ok] * rd[:, ok], axis=0) / (sf[ok] * sr[ok])
    return float(np.mean(corr)), skipped


def leg_size(n: int) -> int:
    """Names per leg: floor(N/10), or 1 below ten portfolios."""
    if n < 10:
        warnings.warn(f"only {n} portfolios; using one name per leg", stacklevel=3)
        return 1
    return n // 10


def top_minus_bottom_series(forecasts, realized) -> np.ndarray:
    """Monthly equal-weighted top-decile minus bottom-decile return.

    Ties at the decile boundary go to the lower portfolio index.
    """
    f, r = _pair(forecasts, realized)
    n, months = f.shape
    size = leg_size(n)
    idx = np.arange(n)
    out = np.full(months, np.nan)
    for t in range(months):
        if not (np.all(np.isfinite(f[:, t])) and np.all(np.isfinite(r[:, t]))):
            continue
        top = np.lexsort((idx, -f[:, t]))[:size]
        bottom = np.lexsort((idx, f[:, t]))[:size]
        out[t] = r[top, t].mean() - r[bottom, t].mean()
    return out


def sharpe_ratio(series, ddof: int = 1):
    """sqrt(12) * mean / std of a monthly series; None for a constant series."""
    s = np.asarray(series, dtype=float)
    s = s[np.isfinite(s)]
    if s.size <= ddof or np.ptp(s) == 0:
        return None
    sd = float(np.std(s, ddof=ddof))
    if sd == 0 or not np.isfinite(sd):
        return None
    return float(np.sqrt(12.0) * s.mean() / sd)


def top_minus_bottom(forecasts, realized) -> dict:
    series = top_minus_bottom_series(forecasts, realized)
    return {"series": series, "sharpe": sharpe_ratio(series)}


@dataclass(frozen=True)
class PricingScores:
    rmse_alpha: float
    mae_alpha: float
    mae_rank: float
    ic: float | None
    ic_skipped: int
    tb_sharpe: float | None
    tb_mean: float

    def as_dict(self) -> dict:
        return asdict(self)


def pricing_scores(alphas, forecasts, realized) -> PricingScores:
    errs = alpha_errors(alphas)
    ic, skipped = information_coefficient(forecasts, realized)
    tb = top_minus_bottom(forecasts, realized)
    series = tb["series"]
    return PricingScores(
        rmse_alpha=errs["rmse_alpha"],
        mae_alpha=errs["mae_alpha"],
        mae_rank=mae_rank(forecasts, realized),
        ic=ic,
        ic_skipped=skipped,
        tb_sharpe=tb["sharpe"],
        tb_mean=float(np.nanmean(series)) if np.isfinite(series).any() else float("nan"),
    )
