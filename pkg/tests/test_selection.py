import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mumoe import selection
from mumoe.selection import SelectionParams

ALL = selection.STRATEGIES


def params(rho, d, strategy="sort", tie="canonical"):
    return SelectionParams(rho, d, strategy=strategy, tie_mode=tie)


def test_active_count_floor_and_clamp():
    assert selection.active_count(0.5, 8) == 4
    assert selection.active_count(0.4, 64) == 25   # floor(25.6)
    assert selection.active_count(0.01, 10) == 1   # clamped up
    assert selection.active_count(1.0, 7) == 7


def test_params_derive_complement():
    p = params(0.3, 10)
    assert p.k == 3 and p.k_c == 7 and p.k + p.k_c == 10


def test_params_reject_bad_rho():
    with pytest.raises(ValueError):
        params(0.0, 4)
    with pytest.raises(ValueError):
        params(1.5, 4)


@pytest.mark.parametrize("strategy", ALL)
def test_distinct_values_hand_case(strategy):
    mask = selection.select(np.array([[4.0, 1.0, 3.0, 2.0]], np.float32),
                            params(0.5, 4, strategy))
    assert mask.active.tolist() == [[True, False, True, False]]


@pytest.mark.parametrize("strategy", ALL)
def test_all_equal_canonical_keeps_lowest_columns(strategy):
    mask = selection.select(np.array([[5.0, 5.0, 5.0, 5.0]], np.float32),
                            params(0.5, 4, strategy))
    assert mask.active.tolist() == [[True, True, False, False]]


@pytest.mark.parametrize("strategy", ALL)
def test_all_equal_parity_drops_everything(strategy):
    mask = selection.select(np.array([[5.0, 5.0, 5.0, 5.0]], np.float32),
                            params(0.5, 4, strategy, tie="parity"))
    assert not mask.active.any()


@pytest.mark.parametrize("strategy", ALL)
def test_full_density_all_active(strategy):
    mask = selection.select(np.zeros((3, 5), np.float32), params(1.0, 5, strategy))
    assert mask.active.all()


def exhaustive_best_subset(row, k):
    """Max-score-sum subset with lexicographically smallest column tuple."""
    best = None
    for combo in itertools.combinations(range(len(row)), k):
        total = sum(float(row[c]) for c in combo)
        if best is None or total > best[0] + 1e-18:
            best = (total, combo)
    return set(best[1])


def test_sort_matches_exhaustive_subset_oracle(rng):
    # 200 random rows at d <= 12; itertools enumeration is the oracle.
    for _ in range(200):
        d = int(rng.integers(2, 13))
        k = int(rng.integers(1, d + 1))
        rho = 1.0 if k == d else (k + 0.5) / d  # floor(rho*d) == k
        row = rng.standard_normal(d).astype(np.float32)
        mask = selection.select_sort(row[None, :], params(rho, d))
        assert mask.k_active_per_row == k
        got = set(np.flatnonzero(mask.active[0]))
        assert got == exhaustive_best_subset(row, k)


def test_strategies_agree_on_random_matrices(rng):
    for _ in range(50):
        d = int(rng.integers(2, 40))
        d_prime = int(rng.integers(1, 16))
        rho = float(rng.uniform(0.1, 1.0))
        scores = rng.random((d_prime, d)).astype(np.float32)
        masks = [selection.select(scores, params(rho, d, s)) for s in ALL]
        for m in masks[1:]:
            assert np.array_equal(masks[0].active, m.active)


def test_strategies_agree_under_heavy_ties(rng):
    # Quantized scores force threshold ties in most rows.
    for _ in range(30):
        d = int(rng.integers(4, 24))
        scores = rng.integers(0, 3, (8, d)).astype(np.float32)
        rho = float(rng.uniform(0.2, 0.9))
        masks = [selection.select(scores, params(rho, d, s)) for s in ALL]
        for m in masks[1:]:
            assert np.array_equal(masks[0].active, m.active)
        assert (masks[0].row_counts() == masks[0].k_active_per_row).all()


def test_parity_equals_canonical_without_ties(rng):
    for _ in range(50):
        d = int(rng.integers(3, 30))
        scores = rng.random((4, d)).astype(np.float32)
        rho = float(rng.uniform(0.1, 0.95))
        canon = selection.select(scores, params(rho, d, "kth_threshold"))
        par = selection.select(scores, params(rho, d, "kth_threshold", tie="parity"))
        assert np.array_equal(canon.active, par.active)


def test_parity_never_exceeds_budget(rng):
    scores = rng.integers(0, 2, (20, 16)).astype(np.float32)
    par = selection.select(scores, params(0.5, 16, "kth_threshold", tie="parity"))
    assert (par.row_counts() <= par.k_active_per_row).all()


def test_monotonicity_raising_a_kept_score_keeps_it(rng):
    scores = rng.random((1, 12)).astype(np.float32)
    p = params(0.5, 12)
    base = selection.select(scores, p)
    kept = np.flatnonzero(base.active[0])
    bumped = scores.copy()
    bumped[0, kept[0]] += 10.0
    after = selection.select(bumped, p)
    assert after.active[0, kept[0]]
    assert np.array_equal(after.active, base.active)


def test_ranking_invariance_under_squaring(rng):
    scores = rng.random((6, 20)).astype(np.float32)  # non-negative
    p = params(0.35, 20)
    assert np.array_equal(selection.select(scores, p).active,
                          selection.select(scores * scores, p).active)


def test_scores_shape_validation(rng):
    with pytest.raises(Exception):
        selection.select(rng.random((2, 8)).astype(np.float32), params(0.5, 9))


@settings(max_examples=80, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(2, 32), st.integers(1, 6),
       st.floats(0.05, 1.0))
def test_canonical_cardinality_property(seed, d, d_prime, rho):
    rng = np.random.default_rng(seed)
    scores = rng.random((d_prime, d)).astype(np.float32)
    for strategy in ALL:
        mask = selection.select(scores, params(rho, d, strategy))
        assert (mask.row_counts() == mask.k_active_per_row).all()


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(2, 24), st.floats(0.05, 1.0),
       st.booleans())
def test_strategy_equivalence_property(seed, d, rho, quantize):
    rng = np.random.default_rng(seed)
    scores = rng.random((5, d)).astype(np.float32)
    if quantize:
        scores = np.round(scores * 4.0) / 4.0
    reference = selection.select_sort(scores, params(rho, d))
    for strategy in ("heap_topk", "kth_threshold"):
        assert np.array_equal(
            selection.select(scores, params(rho, d, strategy)).active,
            reference.active)
