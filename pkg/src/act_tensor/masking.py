"""Held-out evaluation masks: MAR, one-year blocks and a two-stage logit.

A :class:`HoldoutPlan` lists the cells hidden from the imputer together with
their true values, so scoring never needs the pre-mask tensor.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

from .errors import ConfigError, StructuralError
from .tensor import MaskedTensor

logger = logging.getLogger(__name__)

REGIMES = ("mar", "block", "logit")


@dataclass(frozen=True, eq=False)
class HoldoutPlan:
    """Held-out cells as parallel index arrays, sorted by (t, n, l)."""

    t: np.ndarray
    n: np.ndarray
    l: np.ndarray
    values: np.ndarray
    regime: str
    fraction: float
    seed: int
    warning: str = ""
    info: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.t)

    @property
    def index(self) -> tuple:
        return (self.t, self.n, self.l)

    def cell_mask(self, shape) -> np.ndarray:
        m = np.zeros(shape, dtype=bool)
        m[self.index] = True
        return m


def _make_plan(x: MaskedTensor, held: np.ndarray, regime, fraction, seed, warning="", info=None) -> HoldoutPlan:
    t, n, l = np.nonzero(held)  # row-major order gives the (t, n, l) sort
    return HoldoutPlan(
        t=t, n=n, l=l,
        values=x.values[t, n, l].copy(),
        regime=regime,
        fraction=float(fraction),
        seed=int(seed),
        warning=warning,
        info=dict(info or {}),
    )


def _check_fraction(x: MaskedTensor, fraction: float):
    if not 0 < fraction < 1:
        raise ConfigError(f"fraction must lie in (0, 1), got {fraction}")
    if x.n_observed * fraction < 1 - 1e-9:
        raise ConfigError(
            f"{x.n_observed} observed cells is too few to hold out a fraction of {fraction}"
        )


def _target(x: MaskedTensor, fraction: float) -> int:
    # the epsilon absorbs fraction * count landing a hair under an integer
    return int(np.floor(fraction * x.n_observed + 1e-9))


def mask_mar(x: MaskedTensor, fraction: float = 0.10, seed: int = 0) -> HoldoutPlan:
    """Uniform sample without replacement of floor(fraction * observed) cells."""
    _check_fraction(x, fraction)
    rng = np.random.default_rng(seed)
    flat = np.flatnonzero(x.mask)
    pick = rng.choice(flat, size=_target(x, fraction), replace=False)
    held = np.zeros(x.shape, dtype=bool)
    held.reshape(-1)[pick] = True
    return _make_plan(x, held, "mar", fraction, seed)


def mask_block(
    x: MaskedTensor,
    fraction: float = 0.10,
    seed: int = 0,
    block_len: int = 12,
    start_share: float = 0.40,
) -> HoldoutPlan:
    """Hide contiguous runs of `block_len` months in randomly chosen series.

    Series are visited in a random order (without replacement, cycling if
    one pass is not enough). With probability `start_share` a block starts
    at the series' first observed month; otherwise its start is uniform over
    feasible positions. A feasible window holds at least one observed cell
    and no cell already held out. Blocks are added until the target count
    is reached; the last block is not trimmed.
    """
    _check_fraction(x, fraction)
    T, N, L = x.shape
    if T < block_len:
        raise ConfigError(f"series of length {T} cannot hold a block of {block_len} months")
    if not 0 <= start_share <= 1:
        raise ConfigError(f"start_share must lie in [0, 1], got {start_share}")
    rng = np.random.default_rng(seed)
    target = _target(x, fraction)
    obs = x.mask
    held = np.zeros(x.shape, dtype=bool)
    n_ser = N * L
    series_obs = obs.reshape(T, n_ser)
    has_obs = np.flatnonzero(series_obs.any(axis=0))

    n_blocks = n_start = 0
    count = 0
    exhausted = False
    while count < target and not exhausted:
        progressed = False
        for s in rng.permutation(has_obs):
            if count >= target:
                break
            n, l = divmod(int(s), L)
            col_obs = obs[:, n, l]
            col_held = held[:, n, l]
            # window sums of observed-and-free cells and of already held cells
            free = np.convolve((col_obs & ~col_held).astype(int), np.ones(block_len, int), "valid")
            taken = np.convolve(col_held.astype(int), np.ones(block_len, int), "valid")
            feasible = np.flatnonzero((free > 0) & (taken == 0))
            want_start = rng.random() < start_share
            if feasible.size == 0:
                continue
            first = int(np.argmax(col_obs))
            at_start = False
            if want_start and first in feasible:
                begin = first
                at_start = True
            else:
                begin = int(rng.choice(feasible))
                at_start = begin == first
            window = col_obs[begin:begin + block_len] & ~col_held[begin:begin + block_len]
            held[begin:begin + block_len, n, l] |= window
            count += int(window.sum())
            n_blocks += 1
            n_start += at_start
            progressed = True
        exhausted = not progressed

    warning = ""
    if count < target:
        warning = f"block target unreachable: held out {count} of {target} cells"
        logger.warning(warning)
    info = {"blocks": n_blocks, "start_blocks": n_start}
    return _make_plan(x, held, "block", fraction, seed, warning, info)


@dataclass(frozen=True)
class LogitCoeffs:
    """Coefficients of the two-stage logistic missingness model.

    Stage 1, per series: ``P(initial gap) = sigmoid(gap_intercept
    + gap_series * series_density + gap_firm * firm_density)``; gap length
    is geometric with mean `gap_mean` observed months.
    Stage 2, month by month: ``P(hold out) = sigmoid(a + b * held[t-1]
    + c * series_density)``, with `a` calibrated to the target fraction.
    """

    b: float = 4.0
    c: float = 0.0
    gap_intercept: float = -3.0
    gap_series: float = 0.0
    gap_firm: float = 0.0
    gap_mean: float = 6.0


def _logit_walk(first_gap: np.ndarray, uniforms: np.ndarray, obs: np.ndarray, a: float, coeffs: LogitCoeffs, series_density: np.ndarray) -> np.ndarray:
    """Stage-2 walk over T x S series given the stage-1 prefix mask."""
    T = obs.shape[0]
    held = first_gap.copy()
    prev = np.zeros(obs.shape[1], dtype=bool)
    base = a + coeffs.c * series_density
    for t in range(T):
        p = expit(base + coeffs.b * prev)
        draw = (uniforms[t] < p) & obs[t] & ~held[t]
        held[t] |= draw
        prev = held[t]
    return held


def mask_logit(
    x: MaskedTensor,
    fraction: float = 0.10,
    seed: int = 0,
    coeffs: LogitCoeffs = LogitCoeffs(),
) -> HoldoutPlan:
    """Two-stage logistic masking with intercept calibration.

    Random draws are made once per seed; the stage-2 intercept is then
    found by bisection, and any surplus over floor(fraction * observed)
    is removed from the ends of random held-out runs.
    """
    _check_fraction(x, fraction)
    T, N, L = x.shape
    rng = np.random.default_rng(seed)
    target = _target(x, fraction)
    obs = x.mask.reshape(T, N * L)
    series_density = obs.mean(axis=0)
    firm_density = np.repeat(x.mask.mean(axis=(0, 2)), L)

    # stage 1: initial gaps over the first observed months
    p_gap = expit(coeffs.gap_intercept + coeffs.gap_series * series_density + coeffs.gap_firm * firm_density)
    has_gap = (rng.random(N * L) < p_gap) & obs.any(axis=0)
    gap_len = rng.geometric(1.0 / max(coeffs.gap_mean, 1.0), size=N * L)
    rank_obs = np.cumsum(obs, axis=0)  # 1-based rank of each observed month
    first_gap = obs & has_gap[None, :] & (rank_obs <= gap_len[None, :])
    # stage 1 cells count towards the target; cap them at it
    if first_gap.sum() > target:
        raise ConfigError(
            f"initial gaps alone hold out {int(first_gap.sum())} cells, above the target {target}; "
            "lower gap_intercept or gap_mean"
        )

    uniforms = rng.random((T, N * L))

    def count(a):
        return int(_logit_walk(first_gap, uniforms, obs, a, coeffs, series_density).sum())

    lo, hi = -40.0, 40.0
    c_lo, c_hi = count(lo), count(hi)
    if not c_lo <= target <= c_hi:
        raise ConfigError(
            f"logit calibration cannot reach {target} held-out cells; achievable range [{c_lo}, {c_hi}]"
        )
    for _ in range(80):
        mid = 0.5 * (lo + hi)
        if count(mid) < target:
            lo = mid
        else:
            hi = mid
    # the count jumps in steps (holds chain along runs), so take the first
    # intercept at or above the target and release surplus run tails
    best = hi
    flat = _logit_walk(first_gap, uniforms, obs, best, coeffs, series_density)
    for _ in range(int(flat.sum()) - target):
        nxt = np.vstack([flat[1:], np.zeros((1, flat.shape[1]), bool)])
        tails = np.flatnonzero((flat & ~nxt & ~first_gap).ravel())
        if tails.size == 0:
            break
        flat.ravel()[rng.choice(tails)] = False
    held = flat.reshape(T, N, L)

    warning = ""
    achieved = held.sum() / x.n_observed
    if abs(achieved - fraction) > 0.005:
        warning = f"logit calibration achieved {achieved:.4f} against target {fraction:.4f}"
        logger.warning(warning)
    info = {"intercept": best, "initial_gap_cells": int(first_gap.sum())}
    return _make_plan(x, held, "logit", fraction, seed, warning, info)


def make_plan(x: MaskedTensor, regime: str, fraction: float = 0.10, seed: int = 0, **kwargs) -> HoldoutPlan:
    if regime == "mar":
        return mask_mar(x, fraction, seed)
    if regime == "block":
        return mask_block(x, fraction, seed, **kwargs)
    if regime == "logit":
        return mask_logit(x, fraction, seed, **kwargs)
    raise ConfigError(f"unknown regime {regime!r}; expected one of {REGIMES}")


def apply_plan(x: MaskedTensor, plan: HoldoutPlan) -> MaskedTensor:
    """Copy of `x` with the held-out cells flipped to unobserved."""
    if len(plan):
        T, N, L = x.shape
        if plan.t.max() >= T or plan.n.max() >= N or plan.l.max() >= L:
            raise StructuralError("plan indexes cells outside the tensor")
        unobserved = ~x.mask[plan.index]
        if np.any(unobserved):
            i = int(np.argmax(unobserved))
            raise StructuralError(
                f"plan holds out unobserved cell ({x.months[plan.t[i]]}, {x.firms[plan.n[i]]}, "
                f"{x.characteristics[plan.l[i]]})"
            )
    mask = x.mask.copy()
    mask[plan.index] = False
    return MaskedTensor(x.values, mask, x.months, x.firms, x.characteristics)


def reinstate(x: MaskedTensor, plan: HoldoutPlan) -> MaskedTensor:
    """Put the held-out values back (inverse of :func:`apply_plan`)."""
    values = x.values.copy()
    mask = x.mask.copy()
    values[plan.index] = plan.values
    mask[plan.index] = True
    return MaskedTensor(values, mask, x.months, x.firms, x.characteristics)


def mean_run_length(plan: HoldoutPlan, shape) -> float:
    """Mean length of maximal runs of consecutive held-out months per series."""
    held = plan.cell_mask(shape)
    T = shape[0]
    cols = held.reshape(T, -1)
    padded = np.vstack([np.zeros((1, cols.shape[1]), bool), cols])
    starts = int(np.sum(padded[1:] & ~padded[:-1]))
    return cols.sum() / starts if starts else 0.0
