import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from raterirt.diagnostics import (
    RaterProfile,
    assumption_checks,
    cronbach_alpha,
    eigenvalue_screen,
    flag_raters,
    item_score_table,
    profiles_csv,
    rater_profiles,
    residual_table,
    severity_centrality_csv,
    tail_flags,
    yen_q3,
)
from raterirt.fitting import fit_mfrm
from raterirt.simulate import SimConfig, generate

from conftest import make_dataset


@pytest.fixture(scope="module")
def crossed():
    ds, _ = generate(SimConfig(n_outputs=150, n_raters=4, n_items=4, seed=12))
    return ds, fit_mfrm(ds)


def test_centrality_is_sample_sd_of_thresholds(crossed):
    ds, fit = crossed
    prof = rater_profiles(fit, ds)
    for p, row, rho in zip(prof, fit.params.tau, fit.params.rho):
        assert p.centrality == pytest.approx(np.std(row, ddof=1))
        assert p.severity == rho
    assert sum(p.n_ratings for p in prof) == len(ds)


def test_centrality_example():
    # thresholds (-2, -1, 0, 1, 2) have sample SD sqrt(2.5)
    assert np.std([-2, -1, 0, 1, 2], ddof=1) == pytest.approx(1.5811388300841898)


def flags_oracle(values, lower, upper):
    """Enumerate nearest-rank cutoffs from scratch."""
    n = len(values)
    if n <= 2:
        return set(), set()
    asc = sorted(values)
    lo = asc[max(1, math.ceil(lower * n / 100)) - 1]
    hi = asc[::-1][max(1, math.ceil((100 - upper) * n / 100)) - 1]
    if lo >= hi:
        return set(), set()
    return ({i for i, v in enumerate(values) if v <= lo}, {i for i, v in enumerate(values) if v >= hi})


def test_fifteen_distinct_values_flag_extremes():
    vals = [0.3, -1.2, 0.8, 2.5, -0.1, 0.0, -2.2, 1.1, 0.4, -0.6, 0.9, 1.7, -0.9, 0.2, 0.5]
    low, high = tail_flags(vals)
    assert low == {vals.index(min(vals))}
    assert high == {vals.index(max(vals))}


@pytest.mark.parametrize("n", [1, 2])
def test_tiny_sets_unflagged(n):
    assert tail_flags(list(range(n))) == (set(), set())


def test_all_equal_unflagged():
    assert tail_flags([1.0] * 10) == (set(), set())


@given(st.lists(st.integers(-500, 500).map(lambda v: v / 100), min_size=0, max_size=60),
       st.floats(0.5, 30), st.floats(70, 99.5))
@settings(max_examples=150, deadline=None)
def test_flags_match_oracle_and_monotone_invariance(values, lower, upper):
    got = tail_flags(values, lower, upper)
    assert got == flags_oracle(values, lower, upper)
    assert tail_flags([math.exp(v) for v in values], lower, upper) == got
    assert not (got[0] & got[1])


def test_flag_raters_names_and_pooled_exclusion():
    profs = [RaterProfile(f"r{j}", float(j), float(-j), 10) for j in range(15)]
    profs[0] = RaterProfile("r0", 0.0, 99.0, 10, pooled=True)
    out = {p.rater_id: p.flags for p in flag_raters(profs)}
    assert out["r0"] == {"lenient"}
    assert out["r14"] == {"severe", "extreme"}
    assert out["r1"] == {"central"}
    assert all(not out[f"r{j}"] for j in range(2, 14))
    assert "pooled" in profiles_csv(flag_raters(profs)).splitlines()[1]


def test_severity_centrality_csv():
    text = severity_centrality_csv({"B": [RaterProfile("r", 0.5, 1.0, 3)], "A": []})
    assert text.splitlines() == ["policy_id,rater_id,severity,centrality,n", "B,r,0.5,1.0,3"]


def test_q3_crossed_sim_is_near_minus_one_third(crossed):
    ds, fit = crossed
    rep = yen_q3(ds, fit)
    assert rep.matrix.shape == (4, 4)
    assert -0.45 < rep.mean_q3 < -0.2
    assert residual_table(ds, fit).shape == (ds.n_outputs, 4)


def test_q3_missing_when_too_few_common_outputs():
    rows = [(f"o{n}", "a", r, None, 1 + (n * 3 + len(r)) % 5) for n in range(8) for r in ("x", "yy")]
    rows += [("o0", "b", "x", None, 2), ("o1", "b", "x", None, 4)]
    ds = make_dataset(rows, k=5)
    rep = yen_q3(ds, fit_mfrm(ds))
    assert np.isnan(rep.matrix[0, 1])
    assert rep.to_dict()["matrix"][0][1] is None


def test_alpha_oracle():
    table = [[3, 4, 3, 5], [5, 5, 6, 6], [2, 3, 2, 4], [6, 7, 6, 7], [4, 4, 5, 5]]
    assert cronbach_alpha(table) == pytest.approx(332 / 343, abs=1e-12)


@given(st.floats(-3, 3), st.floats(0.2, 5))
@settings(max_examples=30, deadline=None)
def test_alpha_affine_invariance(shift, scale):
    table = np.array([[3, 4, 3, 5], [5, 5, 6, 6], [2, 3, 2, 4], [6, 7, 6, 7], [4, 4, 5, 5]], float)
    assert cronbach_alpha(table * scale + shift) == pytest.approx(332 / 343, abs=1e-9)


def test_alpha_errors():
    with pytest.raises(ValueError):
        cronbach_alpha([[1], [2], [3]])
    with pytest.raises(ValueError):
        cronbach_alpha([[1, 1], [1, 1], [1, 1]])


def power_iteration_top2(c, iters=2000):
    """Top two eigenvalues by power iteration with deflation."""
    c = np.asarray(c, float)
    out = []
    for _ in range(2):
        v = np.ones(c.shape[0]) / math.sqrt(c.shape[0]) + np.arange(c.shape[0]) * 1e-3
        for _ in range(iters):
            v = c @ v
            v /= np.linalg.norm(v)
        lam = float(v @ c @ v)
        out.append(lam)
        c = c - lam * np.outer(v, v)
    return out


def test_compound_symmetry_eigen():
    corr = np.full((4, 4), 0.6) + 0.4 * np.eye(4)
    s = eigenvalue_screen(corr)
    assert s.lambda1 == pytest.approx(2.8) and s.lambda2 == pytest.approx(0.4)
    assert s.ratio == pytest.approx(7.0) and s.unidimensional
    l1, l2 = power_iteration_top2(corr)
    assert (l1, l2) == (pytest.approx(s.lambda1, abs=1e-8), pytest.approx(s.lambda2, abs=1e-6))


def test_identity_eigen_not_unidimensional():
    s = eigenvalue_screen(np.eye(4))
    assert s.ratio == pytest.approx(1.0) and not s.unidimensional


def test_random_correlation_against_power_iteration():
    rng = np.random.default_rng(0)
    x = rng.normal(size=(200, 5)) + rng.normal(size=(200, 1)) * 1.5
    corr = np.corrcoef(x, rowvar=False)
    s = eigenvalue_screen(corr)
    l1, l2 = power_iteration_top2(corr)
    assert s.lambda1 == pytest.approx(l1, abs=1e-8)
    assert s.lambda2 == pytest.approx(l2, abs=1e-6)


def test_non_symmetric_rejected():
    with pytest.raises(ValueError):
        eigenvalue_screen([[1.0, 0.5], [0.2, 1.0]])


def test_assumption_checks_shape(crossed):
    ds, fit = crossed
    out = assumption_checks(ds, fit)
    assert set(out) >= {"cronbach_alpha", "eigen", "q3", "n_outputs"}
    assert 0 < out["cronbach_alpha"] <= 1
    assert item_score_table(ds).shape == (150, 4)


def test_all_ones_correlation():
    s = eigenvalue_screen(np.ones((4, 4)))
    assert s.lambda1 == pytest.approx(4.0) and s.lambda2 == 0.0 and math.isinf(s.ratio)


def test_alpha_two_identical_items_is_one():
    assert cronbach_alpha([[1, 1], [3, 3], [4, 4], [7, 7]]) == pytest.approx(1.0)


@given(st.integers(0, 3), st.floats(-5, 5))
@settings(max_examples=30, deadline=None)
def test_alpha_single_item_shift_invariance(item, c):
    table = np.array([[3, 4, 3, 5], [5, 5, 6, 6], [2, 3, 2, 4], [6, 7, 6, 7], [4, 4, 5, 5]], float)
    table[:, item] += c
    assert cronbach_alpha(table) == pytest.approx(332 / 343, abs=1e-9)


def test_q3_symmetric_and_output_permutation_invariant(crossed):
    ds, fit = crossed
    rep = yen_q3(ds, fit)
    off = ~np.eye(4, dtype=bool)
    np.testing.assert_array_equal(rep.matrix[off], rep.matrix.T[off])
    assert np.all(np.abs(rep.matrix[off]) <= 1)
    renamed = make_dataset([(f"z{999 - int(r.output_id[1:]):04d}", r.item_id, r.rater_id, None, r.category)
                            for r in ds.records])
    rep2 = yen_q3(renamed, fit_mfrm(renamed))
    np.testing.assert_allclose(rep2.matrix[off], rep.matrix[off], atol=1e-8)


def test_identical_raters_have_zero_severity():
    rng = np.random.default_rng(6)
    rows = []
    for n in range(60):
        for i in range(3):
            c = int(rng.integers(1, 8))
            rows += [(f"o{n:02d}", f"i{i}", r, None, c) for r in ("a", "b", "c")]
    ds = make_dataset(rows)
    prof = rater_profiles(fit_mfrm(ds), ds)
    assert max(abs(p.severity) for p in prof) < 1e-8


def test_centrality_shift_invariance(crossed):
    import dataclasses

    ds, fit = crossed
    shifted_params = dataclasses.replace(fit.params, tau=fit.params.tau + np.arange(4.0)[:, None])
    shifted = dataclasses.replace(fit, params=shifted_params)
    a = [p.centrality for p in rater_profiles(fit, ds)]
    b = [p.centrality for p in rater_profiles(shifted, ds)]
    np.testing.assert_allclose(a, b, atol=1e-12)
