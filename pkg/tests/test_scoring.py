import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mumoe import linalg, scoring


def test_magnitude_is_absolute_value():
    assert scoring.magnitude_score([[-2.0, 1.0]]).tolist() == [[2.0, 1.0]]
    assert not scoring.magnitude_score(np.zeros((3, 3), np.float32)).any()


def test_magnitude_matches_elementwise_oracle(rng):
    w = rng.standard_normal((4, 4)).astype(np.float32)
    assert np.array_equal(scoring.magnitude_score(w), np.abs(w))


def test_collect_stats_identity_norms():
    st_ = scoring.collect_stats(np.eye(2, dtype=np.float32))
    assert st_.feature_norms.tolist() == [1.0, 1.0]
    assert st_.gram is None
    assert st_.token_count == 2
    assert st_.lambda_used == 0.0


def test_collect_stats_lambda_policy_hand_case():
    # X = I2: mean squared entry is 0.5, so damping 0.01*0.5 = 0.005 and the
    # gram becomes diag(1.005, 1.005).
    st_ = scoring.collect_stats(np.eye(2, dtype=np.float32), need_gram=True)
    assert st_.lambda_used == pytest.approx(0.005)
    assert st_.gram == pytest.approx(np.diag([1.005, 1.005]), rel=1e-6)


def test_collect_stats_lambda_floor():
    tiny = np.full((2, 2), 1e-8, dtype=np.float32)
    st_ = scoring.collect_stats(tiny, need_gram=True)
    assert st_.lambda_used == scoring.LAMBDA_FLOOR


def test_collect_stats_norms_match_linalg(rng):
    x = rng.standard_normal((8, 32)).astype(np.float32)
    st_ = scoring.collect_stats(x)
    assert np.array_equal(st_.feature_norms,
                          linalg.row_l2_norms(x).astype(np.float32))


def test_wanda_unit_norms_equals_magnitude(rng):
    w = rng.standard_normal((5, 6)).astype(np.float32)
    st_ = scoring.ActivationStats(np.ones(6, np.float32), None, 1, 0.0)
    assert np.array_equal(scoring.wanda_score(w, st_), scoring.magnitude_score(w))


def test_wanda_hand_case():
    w = np.array([[1.0, -2.0], [3.0, 0.5]], dtype=np.float32)
    st_ = scoring.ActivationStats(np.array([2.0, 1.0], np.float32), None, 1, 0.0)
    assert scoring.wanda_score(w, st_).tolist() == [[2.0, 2.0], [6.0, 0.5]]


def test_wanda_norm_length_mismatch(rng):
    st_ = scoring.ActivationStats(np.ones(3, np.float32), None, 1, 0.0)
    with pytest.raises(linalg.ShapeError):
        scoring.wanda_score(rng.standard_normal((2, 5)).astype(np.float32), st_)


def test_wanda_ranking_invariant_to_activation_scale(rng):
    w = rng.standard_normal((6, 10)).astype(np.float32)
    x = rng.standard_normal((10, 16)).astype(np.float32)
    base = scoring.wanda_score(w, scoring.collect_stats(x))
    scaled = scoring.wanda_score(w, scoring.collect_stats(3.0 * x))
    assert np.array_equal(np.argsort(base, axis=1), np.argsort(scaled, axis=1))


def test_sparsegpt_identity_gram_is_squared_weights(rng):
    w = rng.standard_normal((4, 6)).astype(np.float32)
    st_ = scoring.ActivationStats(np.ones(6, np.float32),
                                  np.eye(6, dtype=np.float32), 6, 0.0)
    assert scoring.sparsegpt_score(w, st_) == pytest.approx(w.astype(np.float64) ** 2,
                                                            rel=1e-6)


def test_sparsegpt_diagonal_gram_hand_case(rng):
    # gram diag(4,1): inverse diag(.25,1), Chol diag (.5,1), scores scale by
    # (4, 1) per column.
    w = rng.standard_normal((3, 2)).astype(np.float32)
    st_ = scoring.ActivationStats(np.ones(2, np.float32),
                                  np.diag([4.0, 1.0]).astype(np.float32), 4, 0.0)
    got = scoring.sparsegpt_score(w, st_)
    w64 = w.astype(np.float64)
    assert got[:, 0] == pytest.approx(4.0 * w64[:, 0] ** 2, rel=1e-5)
    assert got[:, 1] == pytest.approx(w64[:, 1] ** 2, rel=1e-5)


def test_sparsegpt_random_diagonal_closed_form(rng):
    # For diagonal gram D the score is w^2 * D_jj.
    for _ in range(100):
        d = rng.integers(2, 9)
        diag = rng.uniform(0.1, 10.0, d)
        w = rng.standard_normal((3, d)).astype(np.float32)
        st_ = scoring.ActivationStats(np.ones(d, np.float32),
                                      np.diag(diag).astype(np.float32), 1, 0.0)
        got = scoring.sparsegpt_score(w, st_)
        expect = (w.astype(np.float64) ** 2) * np.diag(st_.gram).astype(np.float64)
        assert got == pytest.approx(expect, rel=1e-5)


def test_sparsegpt_matches_compositional_oracle(rng):
    # Independent oracle: numpy inverse + numpy Cholesky.
    a = rng.standard_normal((8, 24)).astype(np.float32)
    w = rng.standard_normal((5, 8)).astype(np.float32)
    st_ = scoring.collect_stats(a, need_gram=True)
    got = scoring.sparsegpt_score(w, st_)
    inv = np.linalg.inv(st_.gram.astype(np.float64))
    c = np.diag(np.linalg.cholesky(inv))
    expect = (w.astype(np.float64) ** 2) / c[None, :] ** 2
    assert got == pytest.approx(expect, rel=1e-4)


def test_sparsegpt_requires_gram(rng):
    st_ = scoring.ActivationStats(np.ones(4, np.float32), None, 1, 0.0)
    with pytest.raises(ValueError):
        scoring.sparsegpt_score(np.ones((2, 4), np.float32), st_)


def test_score_weights_dispatch(rng):
    w = rng.standard_normal((3, 4)).astype(np.float32)
    x = rng.standard_normal((4, 8)).astype(np.float32)
    st_ = scoring.collect_stats(x, need_gram=True)
    assert np.array_equal(scoring.score_weights("magnitude", w, None),
                          scoring.magnitude_score(w))
    assert np.array_equal(scoring.score_weights("wanda", w, st_),
                          scoring.wanda_score(w, st_))
    with pytest.raises(ValueError):
        scoring.score_weights("wanda", w, None)
    with pytest.raises(ValueError):
        scoring.score_weights("optimal", w, st_)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 8), st.integers(1, 8),
       st.sampled_from(["magnitude", "wanda", "sparsegpt_score"]))
def test_scores_nonnegative_and_shaped(seed, d_prime, d, method):
    rng = np.random.default_rng(seed)
    w = rng.standard_normal((d_prime, d)).astype(np.float32)
    x = rng.standard_normal((d, 6)).astype(np.float32)
    stats = scoring.collect_stats(x, need_gram=method == "sparsegpt_score")
    s = scoring.score_weights(method, w, stats)
    assert s.shape == w.shape
    assert np.all(s >= 0.0)
    assert np.all(np.isfinite(s))
