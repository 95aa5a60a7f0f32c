"""Synthetic panels and market data with planted structure."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.ndimage import gaussian_filter1d
from scipy.stats import rankdata

from .pricing import MarketData
from .tensor import CpModel, MaskedTensor, reconstruct


def rank_normalize(values, mask=None) -> np.ndarray:
    """Cross-sectional rank transform to [-0.5, 0.5].

    For every (t, l) the observed firms are ranked (ties share the average
    rank), recentred and rescaled linearly so the lowest maps to -0.5 and
    the highest to 0.5. A lone observation maps to 0. Unobserved cells come
    back as NaN.
    """
    values = np.asarray(values, dtype=float)
    if mask is None:
        mask = ~np.isnan(values)
    mask = np.asarray(mask, dtype=bool)
    out = np.full(values.shape, np.nan)
    T, N, L = values.shape
    for t in range(T):
        for l in range(L):
            obs = mask[t, :, l]
            k = int(obs.sum())
            if k == 0:
                continue
            if k == 1:
                out[t, obs, l] = 0.0
                continue
            r = rankdata(values[t, obs, l])
            out[t, obs, l] = (r - 1.0) / (k - 1.0) - 0.5
    return out


def _labels(T, N, L, start_year=2016):
    months = tuple(f"{start_year + i // 12:04d}-{i % 12 + 1:02d}" for i in range(T))
    firms = tuple(f"F{i:05d}" for i in range(N))
    chars = tuple(["size"] + [f"c{j:02d}" for j in range(1, L)])
    return months, firms, chars


def slow_factors(T, rank, bandwidth, rng):
    """Unit-variance slow-moving paths: white noise through a Gaussian kernel."""
    z = rng.standard_normal((T, rank))
    if bandwidth <= 0:
        return z
    x = gaussian_filter1d(z, bandwidth, axis=0, mode="nearest")
    x -= x.mean(axis=0)
    return x / x.std(axis=0)


def gen_lowrank_panel(T, N, L, rank, noise_sd=0.0, seed=0, normalize=False, smooth_months=0.0):
    """Fully observed panel equal to a random rank-`rank` CP model plus noise.

    Factors are i.i.d. standard normal. A positive `smooth_months` makes the
    time factors slow-moving instead (see :func:`slow_factors`). Returns the
    panel and the planted model. With `normalize` the values are
    rank-normalized afterwards (the planted model then no longer reproduces
    them exactly).
    """
    rng = np.random.default_rng(seed)
    model = CpModel(
        slow_factors(T, rank, smooth_months, rng),
        rng.standard_normal((N, rank)),
        rng.standard_normal((L, rank)),
    )
    values = reconstruct(model)
    if noise_sd:
        values = values + noise_sd * rng.standard_normal(values.shape)
    if normalize:
        values = rank_normalize(values)
    months, firms, chars = _labels(T, N, L)
    return MaskedTensor(values, np.ones(values.shape, bool), months, firms, chars), model


@dataclass(frozen=True)
class GroupSpec:
    """One firm group: its size, planted CP rank, density and noise level."""

    n_firms: int
    rank: int = 3
    density: float = 1.0
    noise_sd: float = 0.0
    smooth_months: float = 6.0  # Gaussian-kernel bandwidth of the time factors; 0 gives white noise


def gen_heterogeneous_panel(T, N, L, group_specs, seed=0):
    """Panel whose firm groups follow their own planted factor sets.

    Firms are split into consecutive blocks of the given sizes (the sizes
    must add up to N). Each group draws its own persistent time factors,
    firm loadings and characteristic loadings; each group keeps a uniform
    random share `density` of its cells observed. Time factors are
    slow-moving and the noise is i.i.d., so the planted signal is smooth in
    time and the noise is short-lived.

    Returns
    -------
    panel : MaskedTensor
        The observed panel (unobserved cells NaN).
    truth : ndarray, shape (T, N, L)
        Noisy values for every cell, observed or not.
    groups : ndarray of int, shape (N,)
    """
    sizes = [g.n_firms for g in group_specs]
    if sum(sizes) != N:
        raise ValueError(f"group sizes add up to {sum(sizes)}, expected {N}")
    rng = np.random.default_rng(seed)
    truth = np.empty((T, N, L))
    mask = np.empty((T, N, L), dtype=bool)
    groups = np.repeat(np.arange(len(group_specs)), sizes)
    start = 0
    for g, spec in enumerate(group_specs):
        stop = start + spec.n_firms
        model = CpModel(
            slow_factors(T, spec.rank, spec.smooth_months, rng),
            rng.standard_normal((spec.n_firms, spec.rank)),
            rng.standard_normal((L, spec.rank)),
        )
        block = reconstruct(model)
        if spec.noise_sd:
            block = block + spec.noise_sd * rng.standard_normal(block.shape)
        truth[:, start:stop, :] = block
        mask[:, start:stop, :] = density_mask((T, spec.n_firms, L), spec.density, rng)
        start = stop
    months, firms, chars = _labels(T, N, L)
    return MaskedTensor(truth, mask, months, firms, chars), truth, groups


def density_mask(shape, density, rng) -> np.ndarray:
    """Exactly round(density * size) observed cells, at least one per firm."""
    size = int(np.prod(shape))
    k = int(round(density * size))
    flat = np.zeros(size, dtype=bool)
    flat[rng.choice(size, size=k, replace=False)] = True
    m = flat.reshape(shape)
    empty = np.flatnonzero(~m.any(axis=(0, 2)))
    for n in empty:
        t, l = rng.integers(shape[0]), rng.integers(shape[2])
        m[t, n, l] = True
    return m


@dataclass(frozen=True)
class MarketTruth:
    """Planted return-generating process behind :func:`gen_market_data`."""

    factors: np.ndarray  # n_factors x T
    betas: np.ndarray  # N x n_factors
    active: tuple


def gen_market_data(panel: MaskedTensor, n_factors=3, active=(0,), beta_scale=1.0, noise_sd=0.0,
                    risk_free=0.001, seed=0, size_char="size"):
    """Returns driven by known factors with characteristic-linked loadings.

    ``r[i, t+1] = rf + sum_j beta[i, j] * f[j, t] + noise`` for the active
    factors j. Loadings are ``beta_scale * (1 + mean_t panel[t, i, l_j])``
    where ``l_j`` cycles through the non-size characteristics, so sorting
    on characteristics spreads the loadings. Market cap is log-normal and
    tilted by the size characteristic when present. The first month's
    return is pure noise around rf.
    """
    rng = np.random.default_rng(seed)
    T, N, L = panel.shape
    factors = rng.normal(0.01, 0.04, size=(n_factors, T))
    betas = np.zeros((N, n_factors))
    values = panel.filled(np.nan)
    char_means = np.nan_to_num(np.nanmean(values, axis=0))  # N x L
    others = [l for l, c in enumerate(panel.characteristics) if c != size_char] or list(range(L))
    for j in active:
        betas[:, j] = beta_scale * (1.0 + char_means[:, others[j % len(others)]])

    returns = np.full((T, N), risk_free)
    returns[1:] += (betas @ factors[:, :-1]).T
    if noise_sd:
        returns += noise_sd * rng.standard_normal((T, N))

    if size_char in panel.characteristics:
        size = np.nan_to_num(values[:, :, panel.characteristics.index(size_char)])
    else:
        size = np.zeros((T, N))
    mcap = np.exp(rng.normal(6.0, 1.0, size=N)[None, :] + 2.0 * size)
    rf = np.full(T, risk_free)
    market = MarketData(returns=returns, mcap=mcap, risk_free=rf, months=panel.months, firms=panel.firms)
    return market, MarketTruth(factors=factors, betas=betas, active=tuple(active))
