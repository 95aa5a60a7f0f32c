"""Temporal smoothers applied to every firm-characteristic series.

All filters act along axis 0, so the same code handles a single series of
length T and a whole T x N x L tensor.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.signal import lfilter

from .errors import ConfigError

KINDS = ("none", "cma", "ema", "kalman")


@dataclass(frozen=True)
class SmootherSpec:
    """Smoother choice and its parameters.

    Kalman defaults h=1e-2 and r=1e-1 are a judgement call: they weight
    measurement noise above process noise on [-0.5, 0.5]-scaled data.
    ``prior_mean=None`` starts each series at its first observation, and
    ``prior_var=None`` means a diffuse prior of ``1e4 * r``.
    """

    kind: str = "none"
    delta: int = 5
    theta: float = 0.5
    h: float = 1e-2
    r: float = 1e-1
    prior_mean: float | None = None
    prior_var: float | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"unknown smoother {self.kind!r}; expected one of {KINDS}")
        if self.kind == "cma":
            _check_delta(self.delta)
        if self.kind == "ema":
            _check_theta(self.theta)
        if self.kind == "kalman":
            _check_variances(self.h, self.r)


def _check_delta(delta):
    if int(delta) != delta or delta < 1 or delta % 2 == 0:
        raise ConfigError(f"CMA window must be an odd positive integer, got {delta}")


def _check_theta(theta):
    if not 0 < theta < 1:
        raise ConfigError(f"EMA theta must lie in (0, 1), got {theta}")


def _check_variances(h, r):
    if not (h > 0 and r > 0):
        raise ConfigError(f"Kalman variances must be positive, got h={h}, r={r}")


def cma(series, delta: int = 5) -> np.ndarray:
    """Centered moving average; the window shrinks to fit near the ends.

    >>> cma([1, 2, 3, 4, 5], 3)
    array([1.5, 2. , 3. , 4. , 4.5])
    """
    _check_delta(delta)
    x = np.asarray(series, dtype=float)
    T = x.shape[0]
    m = (int(delta) - 1) // 2
    if m == 0:
        return x.copy()
    # deviations from the centre value keep constant stretches bit-exact
    acc = np.zeros_like(x)
    width = np.ones(T)
    for s in range(1, m + 1):
        if s >= T:
            break
        acc[:-s] += x[s:] - x[:-s]
        acc[s:] += x[:-s] - x[s:]
        width[:-s] += 1
        width[s:] += 1
    return x + acc / width.reshape((T,) + (1,) * (x.ndim - 1))


def ema(series, theta: float = 0.5) -> np.ndarray:
    """Exponential moving average started at the first value."""
    _check_theta(theta)
    x = np.asarray(series, dtype=float)
    if x.shape[0] == 0:
        return x.copy()
    # filter deviations from the starting value so constant series are fixed points
    dev = lfilter([theta], [1.0, -(1.0 - theta)], x - x[:1], axis=0)
    return x[:1] + dev


def kalman_smooth(series, h: float = 1e-2, r: float = 1e-1, prior_mean=None, prior_var=None) -> np.ndarray:
    """Local-level Kalman filter followed by a Rauch-Tung-Striebel pass.

    State ``y_t = y_{t-1} + w_t`` with ``w_t ~ N(0, h)``, observation
    ``x_t = y_t + v_t`` with ``v_t ~ N(0, r)``. The prior is the predicted
    state for the first month. Returns the smoothed means.
    """
    _check_variances(h, r)
    x = np.asarray(series, dtype=float)
    T = x.shape[0]
    if T == 0:
        return x.copy()
    m0 = x[0] if prior_mean is None else np.broadcast_to(np.asarray(prior_mean, dtype=float), x.shape[1:])
    p0 = 1e4 * r if prior_var is None else float(prior_var)

    # variances do not depend on the data, so one scalar recursion serves every series
    p_pred = np.empty(T)
    p_filt = np.empty(T)
    gain = np.empty(T)
    p = p0
    for t in range(T):
        p_pred[t] = p
        gain[t] = p / (p + r)
        p_filt[t] = (1.0 - gain[t]) * p
        p = p_filt[t] + h

    means = np.empty_like(x)
    m = m0
    for t in range(T):
        m = m + gain[t] * (x[t] - m)
        means[t] = m

    smoothed = means.copy()
    for t in range(T - 2, -1, -1):
        c = p_filt[t] / p_pred[t + 1]
        smoothed[t] = means[t] + c * (smoothed[t + 1] - means[t])
    return smoothed


def smooth_series(series, spec: SmootherSpec) -> np.ndarray:
    if spec.kind == "none":
        return np.array(series, dtype=float, copy=True)
    if spec.kind == "cma":
        return cma(series, spec.delta)
    if spec.kind == "ema":
        return ema(series, spec.theta)
    return kalman_smooth(series, spec.h, spec.r, spec.prior_mean, spec.prior_var)


def smooth_tensor(x, spec: SmootherSpec) -> np.ndarray:
    """Apply the chosen smoother to each of the N*L time series of `x`."""
    x = np.asarray(x, dtype=float)
    if x.ndim != 3:
        raise ConfigError(f"expected a T x N x L array, got shape {x.shape}")
    return smooth_series(x, spec)
