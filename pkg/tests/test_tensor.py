import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from act_tensor.errors import EmptyObservationError, StructuralError
from act_tensor.tensor import (
    CpModel,
    MaskedTensor,
    extract_subtensor,
    fold,
    khatri_rao_rest,
    masked_residual_sq,
    reconstruct,
    unfold,
)

dims = st.tuples(st.integers(1, 5), st.integers(1, 5), st.integers(1, 5))


def test_reconstruct_rank1_ones():
    m = CpModel(np.ones((2, 1)), np.ones((3, 1)), np.ones((2, 1)))
    assert np.array_equal(reconstruct(m), np.ones((2, 3, 2)))


def test_reconstruct_zeroed_column_equals_surviving_component(rng):
    U, V, W = rng.standard_normal((4, 2)), rng.standard_normal((5, 2)), rng.standard_normal((3, 2))
    U[:, 1] = 0.0
    full = reconstruct(CpModel(U, V, W))
    single = reconstruct(CpModel(U[:, :1], V[:, :1], W[:, :1]))
    assert np.allclose(full, single, atol=1e-15)


def test_reconstruct_matches_triple_loop(rng):
    U, V, W = rng.standard_normal((4, 2)), rng.standard_normal((5, 2)), rng.standard_normal((3, 2))
    got = reconstruct(CpModel(U, V, W))
    want = np.zeros((4, 5, 3))
    for t in range(4):
        for n in range(5):
            for l in range(3):
                want[t, n, l] = sum(U[t, r] * V[n, r] * W[l, r] for r in range(2))
    assert np.max(np.abs(got - want)) < 1e-12


def test_cp_model_rejects_mismatched_ranks():
    with pytest.raises(StructuralError):
        CpModel(np.ones((2, 1)), np.ones((3, 2)), np.ones((2, 1)))


def test_cp_model_gamma_is_ones(rng):
    m = CpModel(rng.standard_normal((2, 3)), rng.standard_normal((2, 3)), rng.standard_normal((2, 3)))
    assert np.array_equal(m.gamma, np.ones(3))
    assert m.rank == 3


def test_residual_zero_for_perfect_fit(rng):
    m = CpModel(rng.standard_normal((3, 2)), rng.standard_normal((4, 2)), rng.standard_normal((2, 2)))
    x = MaskedTensor(reconstruct(m), np.ones((3, 4, 2), bool))
    assert masked_residual_sq(x, m) == pytest.approx(0.0, abs=1e-20)


def test_residual_single_cell():
    mask = np.zeros((2, 2, 2), bool)
    mask[1, 0, 1] = True
    values = np.zeros((2, 2, 2))
    values[1, 0, 1] = 2.0
    m = CpModel(np.zeros((2, 1)), np.zeros((2, 1)), np.zeros((2, 1)))
    assert masked_residual_sq(MaskedTensor(values, mask), m) == 4.0


def test_residual_matches_loop(rng):
    values = rng.standard_normal((3, 3, 3))
    mask = rng.random((3, 3, 3)) < 0.5
    m = CpModel(rng.standard_normal((3, 2)), rng.standard_normal((3, 2)), rng.standard_normal((3, 2)))
    xhat = reconstruct(m)
    want = sum((values[i] - xhat[i]) ** 2 for i in np.ndindex(3, 3, 3) if mask[i])
    assert abs(masked_residual_sq(MaskedTensor(values, mask), m) - want) < 1e-12


def test_residual_empty_mask_raises():
    m = CpModel(np.ones((2, 1)), np.ones((2, 1)), np.ones((2, 1)))
    with pytest.raises(EmptyObservationError):
        masked_residual_sq(MaskedTensor(np.ones((2, 2, 2)), np.zeros((2, 2, 2), bool)), m)


def test_residual_shape_mismatch_raises():
    m = CpModel(np.ones((2, 1)), np.ones((3, 1)), np.ones((2, 1)))
    with pytest.raises(StructuralError):
        masked_residual_sq(MaskedTensor(np.ones((2, 2, 2)), np.ones((2, 2, 2), bool)), m)


def test_unfold_documented_ordering():
    x = np.arange(8.0).reshape(2, 2, 2)
    assert np.array_equal(unfold(x, "time"), [[0, 1, 2, 3], [4, 5, 6, 7]])
    # firm mode: columns (t, l) with l fastest
    assert np.array_equal(unfold(x, "firm"), [[0, 1, 4, 5], [2, 3, 6, 7]])
    assert np.array_equal(unfold(x, 2), [[0, 2, 4, 6], [1, 3, 5, 7]])


def test_unfold_zeros():
    u = unfold(np.zeros((3, 4, 5)), "char")
    assert u.shape == (5, 12) and not u.any()


@given(dims, st.sampled_from([0, 1, 2]), st.integers(0, 2**32 - 1))
def test_fold_unfold_round_trip(shape, mode, seed):
    x = np.random.default_rng(seed).standard_normal(shape)
    assert np.array_equal(fold(unfold(x, mode), mode, shape), x)


@given(dims, st.integers(1, 3), st.sampled_from([0, 1, 2]), st.integers(0, 2**32 - 1))
def test_khatri_rao_rows_match_unfold_columns(shape, rank, mode, seed):
    rng = np.random.default_rng(seed)
    m = CpModel(*(rng.standard_normal((s, rank)) for s in shape))
    lhs = unfold(reconstruct(m), mode)
    rhs = m.factors()[mode] @ khatri_rao_rest(m, mode).T
    assert np.allclose(lhs, rhs, atol=1e-12)


@given(dims, st.integers(1, 3), st.integers(0, 2), st.floats(-3, 3), st.integers(0, 2**32 - 1))
def test_reconstruct_multilinear_in_column_scale(shape, rank, mode, c, seed):
    rng = np.random.default_rng(seed)
    fs = [rng.standard_normal((s, rank)) for s in shape]
    base = CpModel(*fs)
    r = rank - 1
    scaled = [f.copy() for f in fs]
    scaled[mode][:, r] *= c
    comp = np.einsum("t,n,l->tnl", fs[0][:, r], fs[1][:, r], fs[2][:, r])
    expect = reconstruct(base) + (c - 1.0) * comp
    assert np.allclose(reconstruct(CpModel(*scaled)), expect, atol=1e-12)


@given(dims, st.integers(0, 2**32 - 1))
def test_masked_residual_bounded_by_full(shape, seed):
    rng = np.random.default_rng(seed)
    values = rng.standard_normal(shape)
    mask = rng.random(shape) < 0.6
    mask.flat[0] = True
    m = CpModel(*(rng.standard_normal((s, 2)) for s in shape))
    full = float(np.sum((values - reconstruct(m)) ** 2))
    assert masked_residual_sq(MaskedTensor(values, mask), m) <= full + 1e-12


@given(dims, st.integers(0, 2**32 - 1))
def test_sentinel_hygiene(shape, seed):
    rng = np.random.default_rng(seed)
    values = rng.standard_normal(shape)
    mask = rng.random(shape) < 0.5
    mask.flat[0] = True
    garbage = np.where(mask, values, rng.standard_normal(shape) * 1e6)
    a, b = MaskedTensor(values, mask), MaskedTensor(garbage, mask)
    assert np.array_equal(a.filled(0.0), b.filled(0.0))
    m = CpModel(*(rng.standard_normal((s, 2)) for s in shape))
    assert masked_residual_sq(a, m) == masked_residual_sq(b, m)
    assert np.all(np.isnan(a.values[~mask]))


def test_masked_tensor_invariants(rng):
    x = MaskedTensor(rng.standard_normal((2, 3, 4)), rng.random((2, 3, 4)) < 0.5)
    assert x.n_observed == int(x.mask.sum())
    assert x.density == x.n_observed / 24
    with pytest.raises(StructuralError):
        MaskedTensor(np.zeros((2, 2, 2)), np.zeros((2, 2, 1), bool))
    with pytest.raises(ValueError):
        x.values[0, 0, 0] = 1.0  # read-only


def test_extract_identity_and_empty(rng):
    x = MaskedTensor(rng.standard_normal((2, 3, 2)), np.ones((2, 3, 2), bool), firms=("a", "b", "c"))
    same = extract_subtensor(x, [0, 1, 2])
    assert np.array_equal(same.values, x.values) and same.firms == x.firms
    empty = extract_subtensor(x, [])
    assert empty.shape == (2, 0, 2) and empty.density == 0.0


def test_extract_permutes_labels_and_values(rng):
    x = MaskedTensor(rng.standard_normal((2, 3, 2)), np.ones((2, 3, 2), bool), firms=("firm0", "firm1", "firm2"))
    sub = extract_subtensor(x, [2, 0])
    assert sub.firms == ("firm2", "firm0")
    assert np.array_equal(sub.values[:, 0], x.values[:, 2])
    assert np.array_equal(sub.values[:, 1], x.values[:, 0])


def test_extract_errors(rng):
    x = MaskedTensor(rng.standard_normal((2, 3, 2)), np.ones((2, 3, 2), bool))
    with pytest.raises(StructuralError):
        extract_subtensor(x, [3])
    with pytest.raises(StructuralError):
        extract_subtensor(x, [1, 1])
