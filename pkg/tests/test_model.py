import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from raterirt.model import (
    MfrmParams,
    PcmParams,
    category_probs,
    cumulative_thresholds,
    gradient,
    log_likelihood,
    record_probabilities,
)

from conftest import make_dataset, max_rel_error, numeric_gradient, random_mfrm_instance

finite = st.floats(-4, 4, allow_nan=False)


def probs_oracle(theta, delta, rho, tau):
    """Direct numerators exp(sum_{h<=k}(eta - tau_h)), no max subtraction."""
    eta = theta - delta - rho
    nums = [math.exp(sum(eta - t for t in tau[:k])) for k in range(len(tau) + 1)]
    total = sum(nums)
    return [v / total for v in nums]


def test_uniform_when_all_zero():
    np.testing.assert_allclose(category_probs(0, 0, 0, np.zeros(6)), np.full(7, 1 / 7), atol=1e-12)


def test_frozen_four_category_vector():
    p = category_probs(1.0, 0.2, -0.3, [-1.0, 0.0, 1.0])
    expect = [0.01644430160469191, 0.13428696099742304, 0.4034203256874781, 0.44584841171040696]
    np.testing.assert_allclose(p, expect, rtol=1e-12)
    np.testing.assert_allclose(p, probs_oracle(1.0, 0.2, -0.3, [-1.0, 0.0, 1.0]), rtol=1e-12)


def test_two_categories_is_logistic():
    for x in (-2.0, 0.0, 0.7, 3.0):
        p = category_probs(x, 0.3, -0.1, [0.4])
        assert p[1] == pytest.approx(1 / (1 + math.exp(-(x - 0.3 + 0.1 - 0.4))), abs=1e-14)


@given(finite, finite, finite, st.lists(finite, min_size=1, max_size=8))
@settings(max_examples=200, deadline=None)
def test_adjacent_log_odds_and_normalization(theta, delta, rho, tau):
    p = category_probs(theta, delta, rho, tau)
    assert p.sum() == pytest.approx(1.0, abs=1e-12)
    assert np.all(p > 0)
    lo = np.log(p[1:] / p[:-1])
    np.testing.assert_allclose(lo, theta - delta - rho - np.asarray(tau), atol=1e-9)


@given(finite, finite, finite, st.lists(finite, min_size=1, max_size=6), st.floats(-5, 5))
@settings(max_examples=100, deadline=None)
def test_location_invariance(theta, delta, rho, tau, c):
    a = category_probs(theta, delta, rho, tau)
    np.testing.assert_allclose(category_probs(theta + c, delta + c, rho, tau), a, atol=1e-12)
    np.testing.assert_allclose(category_probs(theta + c, delta, rho + c, tau), a, atol=1e-12)


def test_no_overflow_at_extremes():
    for theta in (-30.0, 30.0, 500.0):
        p = category_probs(theta, 0, 0, np.linspace(-2, 2, 6))
        assert np.all(np.isfinite(p)) and p.sum() == pytest.approx(1.0)
    assert category_probs(30.0, 0, 0, np.zeros(6))[-1] == pytest.approx(1.0)


def test_loglik_oracle():
    rows = [("a", "x", "r1", None, 1), ("a", "y", "r2", None, 3), ("b", "x", "r2", None, 2)]
    ds = make_dataset(rows, k=3)
    params = MfrmParams(np.array([0.5, -0.2]), np.array([0.1, -0.1]), np.array([0.3, -0.3]),
                        np.array([[-0.5, 0.5], [0.2, -0.2]]))
    want = (math.log(probs_oracle(0.5, 0.1, 0.3, [-0.5, 0.5])[0])
            + math.log(probs_oracle(0.5, -0.1, -0.3, [0.2, -0.2])[2])
            + math.log(probs_oracle(-0.2, 0.1, -0.3, [0.2, -0.2])[1]))
    assert log_likelihood(ds, params) == pytest.approx(want, abs=1e-12)
    probs = record_probabilities(ds, params)
    assert probs.shape == (3, 3)


def test_gradient_matches_finite_differences():
    rng = np.random.default_rng(5)
    for _ in range(10):
        ds, params = random_mfrm_instance(rng)
        num = numeric_gradient(lambda p: log_likelihood(ds, p), params)
        assert max_rel_error(gradient(ds, params), num) < 1e-6


def test_pcm_gradient_matches_finite_differences():
    rng = np.random.default_rng(9)
    rows = [(f"o{n}", f"i{i}", "c", None, int(rng.integers(1, 6))) for n in range(6) for i in range(3)]
    ds = make_dataset(rows, k=5)
    params = PcmParams(rng.normal(size=6), rng.normal(size=3), rng.normal(size=(3, 4)))
    num = numeric_gradient(lambda p: log_likelihood(ds, p), params)
    assert max_rel_error(gradient(ds, params), num) < 1e-6


def test_loglik_is_additive_over_records():
    rng = np.random.default_rng(2)
    ds, params = random_mfrm_instance(rng, n_out=6)
    half = np.arange(len(ds)) % 2 == 0
    a, b = ds.subset(half), ds.subset(~half)

    def reindex(sub):
        pick = lambda full, ids, want: full[[ids.index(x) for x in want]]
        return MfrmParams(
            pick(params.theta, ds.output_ids, sub.output_ids),
            pick(params.delta, ds.item_ids, sub.item_ids),
            pick(params.rho, ds.rater_ids, sub.rater_ids),
            pick(params.tau, ds.rater_ids, sub.rater_ids),
        )

    total = log_likelihood(a, reindex(a)) + log_likelihood(b, reindex(b))
    assert total == pytest.approx(log_likelihood(ds, params), abs=1e-10)


def test_dimension_mismatch():
    ds = make_dataset([("a", "x", "r", None, 2)], k=3)
    bad = MfrmParams(np.zeros(2), np.zeros(1), np.zeros(1), np.zeros((1, 2)))
    with pytest.raises(ValueError, match="theta"):
        log_likelihood(ds, bad)


def test_cumulative_thresholds():
    np.testing.assert_array_equal(cumulative_thresholds([[1.0, 2.0, -1.0]]), [[0.0, 1.0, 3.0, 2.0]])
