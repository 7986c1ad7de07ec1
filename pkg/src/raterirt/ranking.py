"""Per-policy fitting and raw versus model-adjusted policy rankings.

Theta means from separate per-policy fits sit on separate scales, so the
table is meant to be read by rank only.
"""

from __future__ import annotations

import csv
import io
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Mapping

import numpy as np
from scipy import stats

from .data import RatingDataset, collapse_to_rounded_mean
from .fitting import FitConfig, FitError, FitResult, fit_mfrm, fit_pcm

VIEWS = ("raw", "pcm", "mfrm")


def raw_means(dataset: RatingDataset) -> dict[str, float]:
    """Mean rating (scale labels) per policy over all items and raters."""
    if not dataset.has_policies:
        raise ValueError("every record needs a policy_id for per-policy means")
    cats = np.fromiter((r.category for r in dataset.records), np.float64, len(dataset))
    sums = np.bincount(dataset.policy_index, cats, len(dataset.policy_ids))
    counts = np.bincount(dataset.policy_index, minlength=len(dataset.policy_ids))
    if np.any(counts == 0):
        raise ValueError("policy with zero records")
    return {p: float(s / c) for p, s, c in zip(dataset.policy_ids, sums, counts)}


@dataclass
class PerPolicyFits:
    model: str
    fits: dict[str, FitResult]
    failures: dict[str, str] = field(default_factory=dict)

    @property
    def warnings(self) -> list[str]:
        return [f"{pol}: {w}" for pol, fit in self.fits.items() for w in fit.warnings]

    def to_json(self) -> str:
        return json.dumps(
            {"model": self.model, "fits": {k: v.to_dict() for k, v in self.fits.items()},
             "failures": self.failures},
            indent=2, sort_keys=True,
        )

    @classmethod
    def from_json(cls, text: str) -> "PerPolicyFits":
        d = json.loads(text)
        return cls(d["model"], {k: FitResult.from_dict(v) for k, v in d["fits"].items()},
                   d.get("failures", {}))


def fit_per_policy(
    dataset: RatingDataset, model_kind: str, config: FitConfig = FitConfig(), threads: int = 1
) -> PerPolicyFits:
    """Fit ``pcm`` or ``mfrm`` separately on each policy's records.

    A policy that cannot be fitted (for example a disconnected design) is
    recorded in ``failures`` and the others proceed.
    """
    if model_kind not in ("pcm", "mfrm"):
        raise ValueError(f"unknown model kind {model_kind!r}")
    if not dataset.has_policies:
        raise ValueError("every record needs a policy_id for per-policy fits")

    def one(pol: str):
        sub = dataset.policy_subset(pol)
        try:
            if model_kind == "pcm":
                return pol, fit_pcm(collapse_to_rounded_mean(sub), config)
            return pol, fit_mfrm(sub, config)
        except (FitError, ValueError) as exc:
            return pol, f"{type(exc).__name__}: {exc}"

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            results = list(ex.map(one, dataset.policy_ids))
    else:
        results = [one(p) for p in dataset.policy_ids]
    fits = {p: r for p, r in results if isinstance(r, FitResult)}
    failures = {p: r for p, r in results if isinstance(r, str)}
    return PerPolicyFits(model_kind, fits, failures)


@dataclass(frozen=True)
class PolicyScore:
    policy_id: str
    raw_mean: float
    pcm_theta_mean: float
    mfrm_theta_mean: float
    n_outputs: int
    raw_rank: int
    pcm_rank: int
    mfrm_rank: int
    label: str = ""
    group: str = ""
    size: str = ""


@dataclass(frozen=True)
class PolicyScoreTable:
    rows: tuple[PolicyScore, ...]
    warnings: tuple[str, ...] = ()
    ranks_only_comparability: bool = True

    def by_policy(self) -> dict[str, PolicyScore]:
        return {r.policy_id: r for r in self.rows}

    def ranks(self, view: str) -> dict[str, int]:
        return {r.policy_id: getattr(r, f"{view}_rank") for r in self.rows}

    def to_csv(self) -> str:
        buf = io.StringIO()
        names = list(PolicyScore.__dataclass_fields__)
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(names)
        for r in self.rows:
            w.writerow([repr(v) if isinstance(v, float) else v for v in asdict(r).values()])
        return buf.getvalue()

    def to_json(self) -> str:
        return json.dumps(
            {"ranks_only_comparability": self.ranks_only_comparability,
             "warnings": list(self.warnings),
             "policies": [asdict(r) for r in self.rows]},
            indent=2, sort_keys=True,
        )


def _theta_means(dataset: RatingDataset, fits) -> dict[str, float]:
    """Mean theta per policy from per-policy fits or from one joint fit."""
    if isinstance(fits, PerPolicyFits):
        fits = fits.fits
    if isinstance(fits, FitResult):
        policy_of = dataset.output_policy()
        acc: dict[str, list[float]] = {}
        for oid, t in zip(fits.output_ids, fits.params.theta):
            acc.setdefault(policy_of[oid], []).append(float(t))
        return {p: float(np.mean(v)) for p, v in acc.items()}
    return {p: float(np.mean(f.params.theta)) for p, f in fits.items()}


def _rank(values: Mapping[str, float], view: str, notes: list[str]) -> dict[str, int]:
    order = sorted(values, key=lambda p: (-values[p], p))
    for a, b in zip(order, order[1:]):
        if values[a] == values[b]:
            notes.append(f"{view}: tie between {a} and {b}, broken by policy id")
    return {p: i + 1 for i, p in enumerate(order)}


def ranking_table(
    dataset: RatingDataset, fits_pcm, fits_mfrm, metadata: Mapping[str, Mapping[str, str]] | None = None
) -> PolicyScoreTable:
    """Raw, PCM and MFRM views of the policies, ranked high to low.

    ``fits_pcm``/``fits_mfrm`` are per-policy fits (mapping or
    :class:`PerPolicyFits`) or a single joint :class:`FitResult`.
    """
    raw = raw_means(dataset)
    pcm = _theta_means(dataset, fits_pcm)
    mfrm = _theta_means(dataset, fits_mfrm)
    missing = {v: sorted(set(raw) - set(m)) for v, m in (("pcm", pcm), ("mfrm", mfrm))}
    missing = {k: v for k, v in missing.items() if v}
    if missing:
        raise ValueError(f"policies missing from views: {missing}")
    notes: list[str] = []
    ranks = {v: _rank(m, v, notes) for v, m in (("raw", raw), ("pcm", pcm), ("mfrm", mfrm))}
    n_out = {}
    for oid, pol in dataset.output_policy().items():
        n_out[pol] = n_out.get(pol, 0) + 1
    metadata = metadata or {}
    rows = tuple(
        PolicyScore(
            policy_id=p,
            raw_mean=raw[p],
            pcm_theta_mean=pcm[p],
            mfrm_theta_mean=mfrm[p],
            n_outputs=n_out[p],
            raw_rank=ranks["raw"][p],
            pcm_rank=ranks["pcm"][p],
            mfrm_rank=ranks["mfrm"][p],
            label=metadata.get(p, {}).get("label", ""),
            group=metadata.get(p, {}).get("group", ""),
            size=metadata.get(p, {}).get("size", ""),
        )
        for p in sorted(raw, key=lambda p: ranks["mfrm"][p])
    )
    return PolicyScoreTable(rows, tuple(notes))


def read_policy_metadata(path) -> dict[str, dict[str, str]]:
    """Read ``policy_id,label,group,size`` rows keyed by policy id."""
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        need = {"policy_id", "label", "group", "size"}
        if not need <= set(reader.fieldnames or ()):
            raise ValueError(f"policy metadata needs columns {sorted(need)}")
        return {row["policy_id"]: {k: row[k] for k in ("label", "group", "size")} for row in reader}


@dataclass(frozen=True)
class RankShift:
    kendall_tau: float
    deltas: dict[str, int]


def rank_shift(view_a: Mapping[str, int], view_b: Mapping[str, int]) -> RankShift:
    """Kendall correlation between two rankings and signed rank changes (b - a)."""
    if set(view_a) != set(view_b):
        raise ValueError("rankings cover different policies")
    pols = sorted(view_a)
    if len(pols) < 2:
        return RankShift(1.0, {p: 0 for p in pols})
    tau = stats.kendalltau([view_a[p] for p in pols], [view_b[p] for p in pols]).statistic
    return RankShift(float(tau), {p: int(view_b[p] - view_a[p]) for p in pols})
