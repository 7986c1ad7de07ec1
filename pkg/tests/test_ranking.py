import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from raterirt.data import collapse_to_rounded_mean
from raterirt.fitting import fit_mfrm, fit_pcm
from raterirt.ranking import (
    PerPolicyFits,
    fit_per_policy,
    rank_shift,
    ranking_table,
    raw_means,
    read_policy_metadata,
)
from raterirt.simulate import PolicyBlock, SimConfig, equal_policy_blocks, generate

from conftest import make_dataset


@pytest.fixture(scope="module")
def three_policies():
    cfg = SimConfig(n_outputs=90, n_raters=4, n_items=3, k_categories=5, seed=21,
                    policy_blocks=equal_policy_blocks(90, 3))
    return generate(cfg)[0]


def test_raw_means_example():
    rows = [("a", "i", "r", "P", 6), ("a", "j", "r", "P", 7), ("b", "i", "r", "Q", 2)]
    assert raw_means(make_dataset(rows)) == {"P": 6.5, "Q": 2.0}


def test_raw_means_needs_policies():
    with pytest.raises(ValueError):
        raw_means(make_dataset([("a", "i", "r", None, 3)]))


def test_per_policy_equals_direct_fit(three_policies):
    ds = three_policies
    res = fit_per_policy(ds, "mfrm")
    direct = fit_mfrm(ds.policy_subset("P1"))
    np.testing.assert_array_equal(res.fits["P1"].params.theta, direct.params.theta)
    pcm = fit_per_policy(ds, "pcm", threads=3)
    direct = fit_pcm(collapse_to_rounded_mean(ds.policy_subset("P2")))
    np.testing.assert_array_equal(pcm.fits["P2"].params.theta, direct.params.theta)
    assert PerPolicyFits.from_json(res.to_json()).to_json() == res.to_json()


def test_per_policy_fits_are_independent(three_policies):
    ds = three_policies
    base = fit_per_policy(ds, "mfrm")
    # change every rating of P0; the other policies must be untouched
    rows = [(r.output_id, r.item_id, r.rater_id, r.policy_id,
             (6 - r.category) if r.policy_id == "P0" else r.category) for r in ds.records]
    other = fit_per_policy(make_dataset(rows, k=5), "mfrm")
    for p in ("P1", "P2"):
        np.testing.assert_array_equal(other.fits[p].params.theta, base.fits[p].params.theta)


def test_disconnected_policy_recorded_as_failure():
    rows = [(o, "i", r, "bad", 3 + (o == "2")) for r, o in (("A", "1"), ("A", "2"), ("B", "3"), ("B", "4"))]
    rows += [(o, "i", r, "good", 2 + (len(o) + len(r)) % 3) for r in ("A", "B") for o in ("5", "6", "7")]
    res = fit_per_policy(make_dataset(rows, k=5), "mfrm")
    assert "bad" in res.failures and "good" in res.fits


def test_ranking_table_views_and_ties():
    rows = [(f"o{p}{n}", "i", "r", p, c) for p, cs in (("A", [5, 6]), ("B", [5, 6]), ("C", [2, 3]))
            for n, c in enumerate(cs)]
    ds = make_dataset(rows)
    table = ranking_table(ds, {"A": _fake(1.0), "B": _fake(2.0), "C": _fake(0.0)},
                          {"A": _fake(0.0), "B": _fake(0.5), "C": _fake(1.0)})
    assert table.ranks("raw") == {"A": 1, "B": 2, "C": 3}
    assert any("tie between A and B" in w for w in table.warnings)
    assert table.ranks("pcm") == {"B": 1, "A": 2, "C": 3}
    assert table.ranks("mfrm") == {"C": 1, "B": 2, "A": 3}
    assert [r.policy_id for r in table.rows] == ["C", "B", "A"]
    assert table.to_csv().splitlines()[0].startswith("policy_id,raw_mean")
    assert '"ranks_only_comparability": true' in table.to_json()


class _fake:
    def __init__(self, mean):
        self.params = type("P", (), {"theta": np.array([mean])})()


def test_ranking_missing_policy_raises():
    ds = make_dataset([("a", "i", "r", "A", 3), ("b", "i", "r", "B", 4)])
    with pytest.raises(ValueError, match="missing"):
        ranking_table(ds, {"A": _fake(0)}, {"A": _fake(0), "B": _fake(1)})


def test_policy_metadata(tmp_path):
    path = tmp_path / "meta.csv"
    path.write_text("policy_id,label,group,size\nA,alpha,open,7B\n")
    meta = read_policy_metadata(path)
    assert meta == {"A": {"label": "alpha", "group": "open", "size": "7B"}}
    path.write_text("policy_id,label\nA,alpha\n")
    with pytest.raises(ValueError):
        read_policy_metadata(path)


def kendall_oracle(a, b):
    keys = sorted(a)
    s = 0
    for x, y in itertools.combinations(keys, 2):
        s += np.sign(a[x] - a[y]) * np.sign(b[x] - b[y])
    return s / (len(keys) * (len(keys) - 1) / 2)


def test_rank_shift_extremes():
    a = {p: i + 1 for i, p in enumerate("ABCDE")}
    assert rank_shift(a, a).kendall_tau == pytest.approx(1.0)
    rev = {p: 6 - r for p, r in a.items()}
    shift = rank_shift(a, rev)
    assert shift.kendall_tau == pytest.approx(-1.0)
    assert shift.deltas == {"A": 4, "B": 2, "C": 0, "D": -2, "E": -4}


@given(st.permutations(range(1, 6)), st.permutations(range(1, 6)))
@settings(max_examples=100, deadline=None)
def test_rank_shift_matches_pair_counting(pa, pb):
    a = dict(zip("ABCDE", pa))
    b = dict(zip("ABCDE", pb))
    assert rank_shift(a, b).kendall_tau == pytest.approx(kendall_oracle(a, b), abs=1e-12)


def test_rank_shift_mismatched_sets():
    with pytest.raises(ValueError):
        rank_shift({"A": 1, "B": 2}, {"A": 1, "C": 2})


def test_severity_distortion_direction():
    theta = np.random.default_rng(0).normal(0, 1, 60)
    cfg = SimConfig(
        n_outputs=120, n_raters=6, n_items=3, theta=np.concatenate([theta, theta]),
        rho=np.array([0, 0, 0, 0, 1.0, 1.0]) - 1 / 3, seed=2,
        policy_blocks=(PolicyBlock("A", 0, 60, (0, 1, 2, 3, 4)), PolicyBlock("B", 60, 120, (3, 4, 5))),
    )
    ds, _ = generate(cfg)
    raw = raw_means(ds)
    fit = fit_mfrm(ds)
    table = ranking_table(ds, fit, fit)
    got = table.by_policy()
    assert raw["A"] > raw["B"]
    assert abs(got["A"].mfrm_theta_mean - got["B"].mfrm_theta_mean) < abs(raw["A"] - raw["B"])
