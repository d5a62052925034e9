import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mumoe import linalg, selection, sparse
from mumoe.selection import SelectionParams


def full_mask(d_prime, d):
    return selection.SparsityMask(np.ones((d_prime, d), dtype=bool), d)


def random_canonical_mask(rng, d_prime, d, rho):
    scores = rng.random((d_prime, d)).astype(np.float32)
    return selection.select(scores, SelectionParams(rho, d))


def test_compress_full_mask_roundtrips_exactly(rng):
    w = rng.standard_normal((4, 6)).astype(np.float32)
    ws = sparse.compress(w, full_mask(4, 6))
    assert np.array_equal(sparse.dense(ws), w)
    assert not ws.ragged


def test_compress_keeps_zero_valued_active_weights():
    w = np.array([[0.0, 5.0]], dtype=np.float32)
    mask = selection.SparsityMask(np.array([[True, False]]), 1)
    ws = sparse.compress(w, mask)
    assert ws.col_idx[0, 0] == 0
    assert ws.values[0, 0] == 0.0


def test_dense_equals_masked_weights_oracle(rng):
    w = rng.standard_normal((8, 20)).astype(np.float32)
    mask = random_canonical_mask(rng, 8, 20, 0.4)
    assert np.array_equal(sparse.dense(sparse.compress(w, mask)),
                          np.where(mask.active, w, np.float32(0.0)))


def test_compress_shape_mismatch(rng):
    with pytest.raises(linalg.ShapeError):
        sparse.compress(np.ones((2, 3), np.float32), full_mask(2, 4))


def test_col_idx_ascending_per_row(rng):
    ws = sparse.compress(rng.standard_normal((6, 30)).astype(np.float32),
                         random_canonical_mask(rng, 6, 30, 0.5))
    for i in range(6):
        row = ws.col_idx[i, : ws.row_counts[i]].astype(int)
        assert (np.diff(row) > 0).all()
        assert row.max() < 30


def test_sparse_matmul_full_density_bitwise(rng):
    w = rng.standard_normal((10, 24)).astype(np.float32)
    x = rng.standard_normal((24, 7)).astype(np.float32)
    ws = sparse.compress(w, full_mask(10, 24))
    assert np.array_equal(sparse.sparse_matmul(ws, x), linalg.matmul(w, x))


def test_sparse_matmul_single_weight_rows(rng):
    w = np.array([[0.0, 2.0, 0.0], [0.0, 0.0, -3.0]], dtype=np.float32)
    mask = selection.SparsityMask(w != 0.0, 1)
    x = rng.standard_normal((3, 5)).astype(np.float32)
    out = sparse.sparse_matmul(sparse.compress(w, mask), x)
    assert out[0] == pytest.approx(2.0 * x[1], rel=1e-6)
    assert out[1] == pytest.approx(-3.0 * x[2], rel=1e-6)


def test_sparse_matmul_matches_dense_oracle(rng):
    w = rng.standard_normal((32, 64)).astype(np.float32)
    mask = random_canonical_mask(rng, 32, 64, 0.25)
    ws = sparse.compress(w, mask)
    x = rng.standard_normal((64, 8)).astype(np.float32)
    dense_ref = sparse.dense(ws).astype(np.float64) @ x.astype(np.float64)
    assert sparse.sparse_matmul(ws, x) == pytest.approx(dense_ref, rel=1e-6, abs=1e-7)


def test_sparse_matmul_ragged_parity_rows(rng):
    w = rng.standard_normal((5, 12)).astype(np.float32)
    scores = rng.integers(0, 2, (5, 12)).astype(np.float32)
    mask = selection.select(scores,
                            SelectionParams(0.5, 12, strategy="kth_threshold",
                                            tie_mode="parity"))
    ws = sparse.compress(w, mask)
    x = rng.standard_normal((12, 4)).astype(np.float32)
    ref = sparse.dense(ws).astype(np.float64) @ x.astype(np.float64)
    assert sparse.sparse_matmul(ws, x) == pytest.approx(ref, rel=1e-6, abs=1e-7)


def test_sparse_matmul_shape_mismatch(rng):
    ws = sparse.compress(np.ones((2, 3), np.float32), full_mask(2, 3))
    with pytest.raises(linalg.ShapeError):
        sparse.sparse_matmul(ws, np.ones((4, 2), np.float32))


def test_approx_loss_zero_for_full_mask(rng):
    w = rng.standard_normal((4, 8)).astype(np.float32)
    x = rng.standard_normal((8, 16)).astype(np.float32)
    assert sparse.approx_loss(w, sparse.compress(w, full_mask(4, 8)), x) == 0.0


def test_approx_loss_zero_for_zero_activations(rng):
    w = rng.standard_normal((4, 8)).astype(np.float32)
    mask = random_canonical_mask(rng, 4, 8, 0.5)
    assert sparse.approx_loss(w, sparse.compress(w, mask), np.zeros((8, 3), np.float32)) == 0.0


def test_approx_loss_matches_frobenius_oracle(rng):
    w = rng.standard_normal((6, 10)).astype(np.float32)
    mask = random_canonical_mask(rng, 6, 10, 0.3)
    ws = sparse.compress(w, mask)
    x = rng.standard_normal((10, 12)).astype(np.float32)
    diff = w.astype(np.float64) - sparse.dense(ws).astype(np.float64)
    expect = float(np.sum((diff @ x.astype(np.float64)) ** 2))
    assert sparse.approx_loss(w, ws, x) == pytest.approx(expect, rel=1e-5)


def test_approx_loss_monotone_for_nested_masks(rng):
    # A larger-k mask from the same scores contains the smaller one and
    # cannot lose more.
    w = rng.standard_normal((8, 16)).astype(np.float32)
    x = rng.standard_normal((16, 20)).astype(np.float32)
    scores = rng.random((8, 16)).astype(np.float32)
    small = selection.select(scores, SelectionParams(0.25, 16))
    big = selection.select(scores, SelectionParams(0.75, 16))
    assert (small.active <= big.active).all()
    assert (sparse.approx_loss(w, sparse.compress(w, big), x)
            <= sparse.approx_loss(w, sparse.compress(w, small), x))


def test_row_loss_agrees_with_full_loss(rng):
    w = rng.standard_normal((5, 9)).astype(np.float32)
    mask = random_canonical_mask(rng, 5, 9, 0.4)
    ws = sparse.compress(w, mask)
    x = rng.standard_normal((9, 6)).astype(np.float32)
    per_row = [sparse.row_loss(w[i], np.flatnonzero(mask.active[i]), x)
               for i in range(5)]
    total = 0.0
    for v in per_row:
        total += v
    assert sparse.approx_loss(w, ws, x) == total


def test_dump_load_roundtrip_canonical(rng):
    w = rng.standard_normal((7, 15)).astype(np.float32)
    ws = sparse.compress(w, random_canonical_mask(rng, 7, 15, 0.6))
    back = sparse.load_bytes(sparse.dump_bytes(ws))
    assert back.rows == ws.rows and back.cols == ws.cols and back.k == ws.k
    assert np.array_equal(back.col_idx, ws.col_idx)
    assert np.array_equal(back.values, ws.values)
    assert np.array_equal(back.row_counts, ws.row_counts)


def test_dump_load_roundtrip_ragged(rng):
    w = rng.standard_normal((6, 10)).astype(np.float32)
    scores = rng.integers(0, 2, (6, 10)).astype(np.float32)
    mask = selection.select(scores, SelectionParams(0.5, 10, tie_mode="parity"))
    ws = sparse.compress(w, mask)
    assert ws.ragged
    back = sparse.load_bytes(sparse.dump_bytes(ws))
    assert np.array_equal(back.row_counts, ws.row_counts)
    assert np.array_equal(sparse.dense(back), sparse.dense(ws))


def test_load_rejects_truncation(rng):
    ws = sparse.compress(np.ones((2, 4), np.float32), full_mask(2, 4))
    blob = sparse.dump_bytes(ws)
    with pytest.raises(ValueError):
        sparse.load_bytes(blob[:-3])
    with pytest.raises(ValueError):
        sparse.load_bytes(blob + b"\x00")
    with pytest.raises(ValueError):
        sparse.load_bytes(b"\x01")


def test_load_rejects_out_of_range_columns():
    header = np.array([1, 2, 1], dtype="<u4").tobytes()
    bad = header + np.array([9], dtype="<u4").tobytes() + np.float32(1.0).tobytes()
    with pytest.raises(ValueError):
        sparse.load_bytes(bad)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(2, 20), st.integers(1, 8),
       st.floats(0.1, 1.0))
def test_nnz_equals_mask_cardinality(seed, d, d_prime, rho):
    rng = np.random.default_rng(seed)
    w = rng.standard_normal((d_prime, d)).astype(np.float32)
    mask = random_canonical_mask(rng, d_prime, d, rho)
    ws = sparse.compress(w, mask)
    assert ws.nnz() == int(mask.active.sum())
    assert ws.nnz() == mask.k_active_per_row * d_prime
