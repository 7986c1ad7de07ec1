import numpy as np
import pytest
from scipy import stats

from raterirt.data import check_linkage
from raterirt.diagnostics import rater_profiles
from raterirt.fitting import fit_mfrm
from raterirt.model import category_probs
from raterirt.simulate import (
    PolicyBlock,
    SimConfig,
    centrality_scenario,
    equal_policy_blocks,
    generate,
)


def test_binary_symmetric_split():
    ds, _ = generate(SimConfig(n_outputs=10_000, n_raters=1, n_items=1, k_categories=2,
                               theta=np.zeros(10_000), delta=[0.0], rho=[0.0], seed=1))
    share = np.mean([r.category == 2 for r in ds.records])
    assert abs(share - 0.5) < 0.015


def test_rating_frequencies_match_model():
    n = 4000
    ds, truth = generate(SimConfig(n_outputs=n, n_raters=1, n_items=1, k_categories=5,
                                   theta=np.full(n, 0.4), delta=[0.0], rho=[0.0], seed=2))
    p = category_probs(truth.theta[0], truth.delta[0], truth.rho[0], truth.tau[0])
    counts = np.bincount(ds.category_index, minlength=5)
    assert stats.chisquare(counts, p * n).pvalue > 1e-4


def test_rho_offset_lowers_ratings():
    blocks = (PolicyBlock("plain", 0, 200, (0, 1)), PolicyBlock("harsh", 200, 400, (2, 3), rho_offset=1.0))
    ds, truth = generate(SimConfig(n_outputs=400, n_raters=4, n_items=2, rho=np.zeros(4),
                                   theta=np.zeros(400), policy_blocks=blocks, seed=3))
    assert truth.rho[2] - truth.rho[0] == pytest.approx(1.0)
    by = {p: np.mean([r.category for r in ds.records if r.policy_id == p]) for p in ("plain", "harsh")}
    assert by["plain"] > by["harsh"] + 0.3


def test_determinism():
    cfg = SimConfig(n_outputs=50, n_raters=4, seed=9, assignment="random_overlap", raters_per_output=2)
    assert generate(cfg)[0].records == generate(cfg)[0].records
    other = generate(SimConfig(n_outputs=50, n_raters=4, seed=10, assignment="random_overlap"))[0]
    assert other.records != generate(cfg)[0].records


def test_random_overlap_is_connected():
    ds, _ = generate(SimConfig(n_outputs=40, n_raters=9, assignment="random_overlap",
                               raters_per_output=3, seed=4))
    assert check_linkage(ds).connected
    assert ds.n_raters == 9
    assert len(ds) == 40 * 3 * 4


@pytest.mark.parametrize("kw", [
    dict(n_outputs=3, n_raters=10, assignment="random_overlap"),
    dict(n_raters=3, assignment="random_overlap", raters_per_output=4),
    dict(assignment="random_overlap", raters_per_output=1),
])
def test_infeasible_assignment(kw):
    with pytest.raises(ValueError):
        generate(SimConfig(**kw))


def test_policy_blocks_must_cover():
    with pytest.raises(ValueError):
        generate(SimConfig(n_outputs=10, policy_blocks=(PolicyBlock("A", 0, 5),)))


def test_equal_blocks():
    blocks = equal_policy_blocks(10, 3)
    assert [(b.start, b.stop) for b in blocks] == [(0, 3), (3, 7), (7, 10)]
    assert [b.policy_id for b in blocks] == ["P0", "P1", "P2"]


def test_truth_is_centered():
    _, truth = generate(SimConfig(n_outputs=30, n_raters=5, seed=5, tau=[-3, -1, 0, 2, 4, 5]))
    assert abs(truth.delta.sum()) < 1e-12 and abs(truth.rho.sum()) < 1e-12
    assert np.abs(truth.tau.sum(axis=1)).max() < 1e-12
    assert '"theta"' in truth.to_json()


def test_centrality_identity_multiplier():
    cfg = SimConfig(n_outputs=40, n_raters=4, seed=6)
    assert centrality_scenario(cfg, ["R1"], 1.0)[0].records == generate(cfg)[0].records


def test_centrality_scenario_compresses_ratings():
    cfg = SimConfig(n_outputs=300, n_raters=6, n_items=3, rho_sd=0.3, seed=7)
    ds, _ = centrality_scenario(cfg, ["R2"], 3.0)
    sd = {}
    for rid in ds.rater_ids:
        sd[rid] = np.std([r.category for r in ds.records if r.rater_id == rid])
    assert sd["R2"] < min(v for k, v in sd.items() if k != "R2")
    prof = {p.rater_id: p.centrality for p in rater_profiles(fit_mfrm(ds), ds)}
    others = [v for k, v in prof.items() if k != "R2"]
    assert prof["R2"] > np.median(others)


def test_centrality_unknown_rater():
    with pytest.raises(ValueError):
        centrality_scenario(SimConfig(n_raters=3), ["R9"], 2.0)
