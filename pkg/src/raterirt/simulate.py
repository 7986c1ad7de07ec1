"""Synthetic rating data drawn from the MFRM with known parameters."""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .data import RatingDataset, RatingRecord, ScaleSpec
from .model import cumulative_thresholds


@dataclass(frozen=True)
class PolicyBlock:
    """Outputs ``start..stop-1`` belong to ``policy_id`` and are rated by ``raters``.

    ``raters=None`` keeps the config's assignment rule for these outputs.
    ``rho_offset`` is added to the true severity of every rater listed
    (a property of the rater, shared with any other block it rates).
    """

    policy_id: str
    start: int
    stop: int
    raters: tuple[int, ...] | None = None
    rho_offset: float = 0.0


@dataclass(frozen=True)
class SimConfig:
    n_outputs: int = 600
    n_raters: int = 15
    n_items: int = 4
    k_categories: int = 7
    theta_mean: float = 0.0
    theta_sd: float = 1.0
    theta: Sequence[float] | None = None
    delta: Sequence[float] | None = None
    delta_sd: float = 0.5
    rho: Sequence[float] | None = None
    rho_sd: float = 0.5
    # base thresholds shared by all raters; default evenly spaced on [-2, 2]
    tau: Sequence[float] | None = None
    tau_spread: Sequence[float] | None = None
    assignment: str = "fully_crossed"
    raters_per_output: int = 2
    policy_blocks: Sequence[PolicyBlock] | None = None
    seed: int = 0

    def __post_init__(self):
        if self.k_categories < 2:
            raise ValueError("k_categories must be >= 2")
        if min(self.n_outputs, self.n_raters, self.n_items) < 1:
            raise ValueError("n_outputs, n_raters and n_items must be >= 1")
        if self.assignment not in ("fully_crossed", "random_overlap"):
            raise ValueError(f"unknown assignment {self.assignment!r}")
        if self.tau_spread is not None:
            if len(self.tau_spread) != self.n_raters or min(self.tau_spread) <= 0:
                raise ValueError("tau_spread needs one positive multiplier per rater")


@dataclass(frozen=True, eq=False)
class SimTruth:
    theta: np.ndarray
    delta: np.ndarray
    rho: np.ndarray
    tau: np.ndarray
    output_ids: tuple[str, ...]
    item_ids: tuple[str, ...]
    rater_ids: tuple[str, ...]

    def to_json(self) -> str:
        return json.dumps(
            {
                "theta": dict(zip(self.output_ids, self.theta.tolist())),
                "delta": dict(zip(self.item_ids, self.delta.tolist())),
                "rho": dict(zip(self.rater_ids, self.rho.tolist())),
                "tau": dict(zip(self.rater_ids, self.tau.tolist())),
            },
            indent=2,
            sort_keys=True,
        )


def _ids(prefix: str, n: int) -> tuple[str, ...]:
    width = len(str(n - 1))
    return tuple(f"{prefix}{i:0{width}d}" for i in range(n))


def _assignments(cfg: SimConfig, rng: np.random.Generator) -> list[tuple[int, ...]]:
    j = cfg.n_raters
    if cfg.assignment == "fully_crossed":
        raters = [tuple(range(j))] * cfg.n_outputs
    else:
        r = cfg.raters_per_output
        if r < 2:
            raise ValueError("random_overlap needs raters_per_output >= 2")
        if r > j:
            raise ValueError("raters_per_output exceeds n_raters")
        if cfg.n_outputs * (r - 1) + 1 < j:
            raise ValueError("too few outputs for every rater to appear in a chained design")
        # consecutive windows overlap in one rater, which chains all outputs
        order = rng.permutation(j)
        raters = [
            tuple(sorted(int(order[(n * (r - 1) + t) % j]) for t in range(r)))
            for n in range(cfg.n_outputs)
        ]
    covered = np.zeros(cfg.n_outputs, dtype=bool)
    for b in cfg.policy_blocks or ():
        if not 0 <= b.start < b.stop <= cfg.n_outputs:
            raise ValueError(f"block {b.policy_id} output range out of bounds")
        covered[b.start:b.stop] = True
        if b.raters is None:
            continue
        if not b.raters or min(b.raters) < 0 or max(b.raters) >= j:
            raise ValueError(f"block {b.policy_id} has unknown raters")
        for n in range(b.start, b.stop):
            raters[n] = tuple(sorted(b.raters))
    if cfg.policy_blocks and not covered.all():
        raise ValueError("policy blocks must cover every output")
    return raters


def _center(theta, delta, rho, tau):
    m = tau.mean(axis=1)
    tau = tau - m[:, None]
    rho = rho + m
    md, mr = delta.mean(), rho.mean()
    return theta - md - mr, delta - md, rho - mr, tau


def generate(config: SimConfig) -> tuple[RatingDataset, SimTruth]:
    """Draw a dataset; every rating is sampled from the exact model probabilities."""
    cfg = config
    k = cfg.k_categories
    root = np.random.SeedSequence(cfg.seed)
    param_rng = np.random.default_rng(root.spawn(1)[0])

    if cfg.theta is not None:
        theta = np.asarray(cfg.theta, dtype=np.float64)
        if theta.shape != (cfg.n_outputs,):
            raise ValueError("theta needs one value per output")
    else:
        theta = param_rng.normal(cfg.theta_mean, cfg.theta_sd, cfg.n_outputs)
    if cfg.delta is not None:
        delta = np.asarray(cfg.delta, dtype=np.float64)
    else:
        delta = param_rng.normal(0.0, cfg.delta_sd, cfg.n_items)
    if cfg.rho is not None:
        rho = np.asarray(cfg.rho, dtype=np.float64).copy()
    else:
        rho = param_rng.normal(0.0, cfg.rho_sd, cfg.n_raters)
    if delta.shape != (cfg.n_items,) or rho.shape != (cfg.n_raters,):
        raise ValueError("delta/rho lengths must match n_items/n_raters")
    if cfg.tau is not None:
        base = np.asarray(cfg.tau, float)
    else:
        # a single threshold sits at the midpoint
        base = np.linspace(-2, 2, k - 1) if k > 2 else np.zeros(1)
    if base.shape != (k - 1,):
        raise ValueError("tau needs k_categories - 1 values")
    spread = np.ones(cfg.n_raters) if cfg.tau_spread is None else np.asarray(cfg.tau_spread, float)
    tau = (base - base.mean())[None, :] * spread[:, None] + base.mean()
    for b in cfg.policy_blocks or ():
        if b.rho_offset and b.raters is None:
            raise ValueError("rho_offset needs an explicit rater subset")
        if b.rho_offset:
            rho[list(b.raters)] += b.rho_offset

    assign = _assignments(cfg, param_rng)
    theta, delta, rho, tau = _center(theta, delta, rho, tau)

    out_ids, item_ids, rater_ids = _ids("O", cfg.n_outputs), _ids("I", cfg.n_items), _ids("R", cfg.n_raters)
    policy = [None] * cfg.n_outputs
    for b in cfg.policy_blocks or ():
        for n in range(b.start, b.stop):
            policy[n] = b.policy_id
    cum = cumulative_thresholds(tau)
    records = []
    for n in range(cfg.n_outputs):
        rng = np.random.default_rng(np.random.SeedSequence(cfg.seed, spawn_key=(1, n)))
        js = np.repeat(np.asarray(assign[n]), cfg.n_items)
        its = np.tile(np.arange(cfg.n_items), len(assign[n]))
        eta = theta[n] - delta[its] - rho[js]
        a = eta[:, None] * np.arange(k) - cum[js]
        p = np.exp(a - a.max(axis=1, keepdims=True))
        cdf = np.cumsum(p, axis=1)
        u = rng.random(js.size) * cdf[:, -1]
        cats = np.minimum((cdf < u[:, None]).sum(axis=1), k - 1)
        for j, i, c in zip(js, its, cats):
            records.append(RatingRecord(out_ids[n], item_ids[i], rater_ids[j], policy[n], int(c) + 1))
    dataset = RatingDataset(ScaleSpec(k, 1), tuple(records))
    truth = SimTruth(theta, delta, rho, tau, out_ids, item_ids, rater_ids)
    return dataset, truth


def equal_policy_blocks(n_outputs: int, n_policies: int) -> tuple[PolicyBlock, ...]:
    """Split the outputs into ``n_policies`` contiguous, near-equal policies."""
    edges = np.linspace(0, n_outputs, n_policies + 1).round().astype(int)
    width = len(str(n_policies - 1))
    return tuple(
        PolicyBlock(f"P{p:0{width}d}", int(a), int(b)) for p, (a, b) in enumerate(zip(edges, edges[1:]))
    )


def centrality_scenario(
    config: SimConfig, central_rater_ids: Sequence[str], spread_multiplier: float
) -> tuple[RatingDataset, SimTruth]:
    """Generate with the listed raters' thresholds spread by ``spread_multiplier``.

    Wider thresholds make the middle categories more likely (centrality).
    """
    if spread_multiplier <= 0:
        raise ValueError("spread_multiplier must be > 0")
    ids = _ids("R", config.n_raters)
    spread = np.ones(config.n_raters) if config.tau_spread is None else np.array(config.tau_spread, float)
    for rid in central_rater_ids:
        if rid not in ids:
            raise ValueError(f"unknown rater id {rid!r}")
        spread[ids.index(rid)] *= spread_multiplier
    return generate(replace(config, tau_spread=tuple(spread)))
