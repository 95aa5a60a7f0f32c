"""Reference imputers: cross-sectional median and single-tensor CP."""
from __future__ import annotations

import numpy as np

from .cp import SolverConfig, fit_cp
from .tensor import MaskedTensor, reconstruct


def impute_median(x: MaskedTensor) -> np.ndarray:
    """Fill every missing (t, n, l) with the median over firms at (t, l).

    A (t, l) cross-section with no observation falls back to the
    characteristic's median over all months, then to 0.
    """
    out = x.filled(np.nan)
    T, N, L = x.shape
    has = x.mask.any(axis=1)  # T x L
    cross = np.zeros((T, L))
    if has.any():
        # nanmedian over firms; all-NaN slices are overwritten below
        with np.errstate(all="ignore"):
            cross[has] = np.nanmedian(np.moveaxis(out, 1, 2)[has], axis=1)
    for l in range(L):
        col = x.values[:, :, l][x.mask[:, :, l]]
        fallback = float(np.median(col)) if col.size else 0.0
        cross[~has[:, l], l] = fallback
    fill = np.broadcast_to(cross[:, None, :], out.shape)
    return np.where(x.mask, out, fill)


def cluster_seed(seed: int, cluster: int) -> np.random.SeedSequence:
    """Solver stream for one cluster, independent of how many clusters exist."""
    return np.random.SeedSequence(int(seed), spawn_key=(int(cluster),))


def impute_cp(x: MaskedTensor, cfg: SolverConfig = SolverConfig()) -> np.ndarray:
    """Vanilla CP completion: one global fit, full reconstruction returned.

    Uses the first cluster's solver stream so a one-cluster ACT run with no
    smoothing reproduces this output bit for bit.
    """
    model, _ = fit_cp(x, cfg, seed=cluster_seed(cfg.seed, 0))
    return reconstruct(model)
