"""Masked third-order panels, CP models and the linear algebra around them.

Axes are always ordered (time, firm, characteristic).
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import EmptyObservationError, StructuralError

MODES = {"time": 0, "firm": 1, "char": 2}


def _mode_index(mode) -> int:
    if isinstance(mode, str):
        try:
            return MODES[mode]
        except KeyError:
            raise StructuralError(f"unknown mode {mode!r}; expected one of {list(MODES)}") from None
    if mode in (0, 1, 2):
        return int(mode)
    raise StructuralError(f"mode must be 0, 1 or 2, got {mode!r}")


def _frozen(a: np.ndarray) -> np.ndarray:
    a.flags.writeable = False
    return a


@dataclass(frozen=True, eq=False)
class MaskedTensor:
    """A T x N x L panel with an observation mask.

    Unobserved cells hold NaN. The mask is the single source of truth:
    construction overwrites every unobserved value with NaN, so a caller
    can pass arbitrary garbage there.

    Parameters
    ----------
    values : array_like, shape (T, N, L)
    mask : array_like of bool, shape (T, N, L)
        True where the cell is observed.
    months, firms, characteristics : sequence of str, optional
        Axis labels. Default to stringified positions.
    """

    values: np.ndarray
    mask: np.ndarray
    months: tuple = field(default=None)
    firms: tuple = field(default=None)
    characteristics: tuple = field(default=None)

    def __post_init__(self):
        # C order always, so BLAS sums in the same order for equal contents
        values = np.array(self.values, dtype=float, order="C")
        mask = np.array(self.mask, dtype=bool, order="C")
        if values.ndim != 3:
            raise StructuralError(f"values must be 3-D, got shape {values.shape}")
        if mask.shape != values.shape:
            raise StructuralError(f"mask shape {mask.shape} != values shape {values.shape}")
        values[~mask] = np.nan
        object.__setattr__(self, "values", _frozen(values))
        object.__setattr__(self, "mask", _frozen(mask))
        T, N, L = values.shape
        for name, size in (("months", T), ("firms", N), ("characteristics", L)):
            labels = getattr(self, name)
            if labels is None:
                labels = tuple(str(i) for i in range(size))
            else:
                labels = tuple(str(s) for s in labels)
            if len(labels) != size:
                raise StructuralError(f"{name} has {len(labels)} labels for axis of length {size}")
            object.__setattr__(self, name, labels)

    @classmethod
    def from_dense(cls, values, mask=None, **labels) -> "MaskedTensor":
        """Wrap a dense array; NaN cells are unobserved unless `mask` is given."""
        values = np.asarray(values, dtype=float)
        if mask is None:
            mask = ~np.isnan(values)
        return cls(values, mask, **labels)

    @property
    def shape(self) -> tuple:
        return self.values.shape

    @property
    def n_observed(self) -> int:
        return int(self.mask.sum())

    @property
    def density(self) -> float:
        size = self.mask.size
        return self.n_observed / size if size else 0.0

    def filled(self, fill: float = 0.0) -> np.ndarray:
        """Dense copy with unobserved cells set to `fill`."""
        return np.where(self.mask, self.values, fill)

    def with_mask(self, mask) -> "MaskedTensor":
        """Same values and labels, new mask (cells can only be hidden, not revealed)."""
        mask = np.asarray(mask, dtype=bool)
        if np.any(mask & ~self.mask):
            raise StructuralError("new mask reveals cells that are unobserved in the source")
        return MaskedTensor(self.values, mask, self.months, self.firms, self.characteristics)


@dataclass(frozen=True, eq=False)
class CpModel:
    """Rank-R CP model with time, firm and characteristic loadings.

    gamma is kept at all-ones; scale lives in the factor matrices.
    """

    U: np.ndarray
    V: np.ndarray
    W: np.ndarray

    def __post_init__(self):
        mats = [np.array(m, dtype=float) for m in (self.U, self.V, self.W)]
        for name, m in zip("UVW", mats):
            if m.ndim != 2:
                raise StructuralError(f"factor {name} must be 2-D, got shape {m.shape}")
        ranks = {m.shape[1] for m in mats}
        if len(ranks) != 1:
            raise StructuralError(f"factor column counts differ: {[m.shape[1] for m in mats]}")
        if mats[0].shape[1] < 1:
            raise StructuralError("rank must be at least 1")
        for name, m in zip("UVW", mats):
            object.__setattr__(self, name, _frozen(m))

    @property
    def rank(self) -> int:
        return self.U.shape[1]

    @property
    def gamma(self) -> np.ndarray:
        return np.ones(self.rank)

    @property
    def shape(self) -> tuple:
        return (self.U.shape[0], self.V.shape[0], self.W.shape[0])

    def factors(self) -> list:
        return [self.U, self.V, self.W]

    def replace_factor(self, mode, matrix) -> "CpModel":
        mats = self.factors()
        mats[_mode_index(mode)] = matrix
        return CpModel(*mats)


def reconstruct(model: CpModel) -> np.ndarray:
    """Dense T x N x L tensor ``sum_r U[:, r] o V[:, r] o W[:, r]``."""
    return np.einsum("tr,nr,lr->tnl", model.U, model.V, model.W, optimize=True)


def masked_residual_sq(x: MaskedTensor, model: CpModel) -> float:
    """Sum of squared residuals over observed cells only."""
    if x.shape != model.shape:
        raise StructuralError(f"tensor shape {x.shape} != model shape {model.shape}")
    if x.n_observed == 0:
        raise EmptyObservationError("no observed entries")
    resid = x.values[x.mask] - reconstruct(model)[x.mask]
    return float(resid @ resid)


def unfold(x: np.ndarray, mode) -> np.ndarray:
    """Mode-k matricization.

    Rows index `mode`; columns run over the two remaining modes in ascending
    mode order with the last one varying fastest (C order).
    """
    x = np.asarray(x)
    if x.ndim != 3:
        raise StructuralError(f"expected a 3-D array, got shape {x.shape}")
    k = _mode_index(mode)
    return np.moveaxis(x, k, 0).reshape(x.shape[k], -1)


def fold(matrix: np.ndarray, mode, shape: Sequence[int]) -> np.ndarray:
    """Inverse of :func:`unfold`."""
    k = _mode_index(mode)
    shape = tuple(shape)
    rest = [s for i, s in enumerate(shape) if i != k]
    matrix = np.asarray(matrix)
    if matrix.shape != (shape[k], rest[0] * rest[1]):
        raise StructuralError(f"matrix shape {matrix.shape} does not fold into {shape} along mode {k}")
    return np.moveaxis(matrix.reshape(shape[k], *rest), 0, k)


def khatri_rao_rest(model: CpModel, mode) -> np.ndarray:
    """Row-wise Khatri-Rao product of the two factors other than `mode`.

    Row ordering matches the columns of ``unfold(x, mode)``.
    """
    k = _mode_index(mode)
    a, b = [f for i, f in enumerate(model.factors()) if i != k]
    return (a[:, None, :] * b[None, :, :]).reshape(-1, model.rank)


def extract_subtensor(x: MaskedTensor, firm_indices) -> MaskedTensor:
    """Slice the firm axis, keeping the order of `firm_indices`."""
    idx = np.asarray(list(firm_indices), dtype=int).reshape(-1)
    N = x.shape[1]
    bad = idx[(idx < 0) | (idx >= N)]
    if bad.size:
        raise StructuralError(f"firm index {int(bad[0])} out of range for {N} firms")
    if np.unique(idx).size != idx.size:
        raise StructuralError("firm indices must be distinct")
    return MaskedTensor(
        x.values[:, idx, :],
        x.mask[:, idx, :],
        x.months,
        tuple(x.firms[i] for i in idx),
        x.characteristics,
    )
