"""Rater profiles, percentile flags and IRT assumption checks."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field, replace
from typing import Iterable, Sequence

import numpy as np

from .data import RatingDataset, collapse_to_rounded_mean
from .fitting import FitResult
from .model import MfrmParams, PcmParams, record_probabilities

FLAG_NAMES = {
    "severity": ("lenient", "severe"),
    "centrality": ("extreme", "central"),
}


@dataclass(frozen=True)
class RaterProfile:
    rater_id: str
    severity: float
    centrality: float
    n_ratings: int
    pooled: bool = False
    flags: frozenset[str] = field(default_factory=frozenset)


def rater_profiles(fit: FitResult, dataset: RatingDataset) -> list[RaterProfile]:
    """Severity (rho) and centrality (sample SD of the tau row) per rater."""
    if fit.model != "mfrm":
        raise ValueError("rater profiles need an MFRM fit")
    counts = dict(zip(*np.unique(np.asarray([r.rater_id for r in dataset.records]), return_counts=True)))
    pooled = set(fit.pooled_raters)
    tau = fit.params.tau
    ddof = 1 if tau.shape[1] > 1 else 0
    return [
        RaterProfile(
            rater_id=rid,
            severity=float(fit.params.rho[j]),
            centrality=float(np.std(tau[j], ddof=ddof)),
            n_ratings=int(counts.get(rid, 0)),
            pooled=rid in pooled,
        )
        for j, rid in enumerate(fit.rater_ids)
    ]


def nearest_rank(sorted_values: Sequence[float], pct: float) -> float:
    """Nearest-rank percentile of already sorted values."""
    n = len(sorted_values)
    rank = max(1, math.ceil(pct / 100.0 * n))
    return sorted_values[min(rank, n) - 1]


def tail_flags(values: Sequence[float], lower_pct: float = 2.5, upper_pct: float = 97.5):
    """Indices in the lower and upper nearest-rank tails.

    The lower cutoff is the nearest-rank ``lower_pct`` percentile counted
    from the bottom, the upper cutoff the nearest-rank ``100 - upper_pct``
    percentile counted from the top. Values at or beyond a cutoff are
    flagged. With two or fewer values, or when the cutoffs meet, nothing is
    flagged.
    """
    n = len(values)
    if n <= 2:
        return set(), set()
    asc = sorted(values)
    lo = nearest_rank(asc, lower_pct)
    hi = nearest_rank(asc[::-1], 100.0 - upper_pct) if upper_pct < 100 else math.inf
    if lo >= hi:
        return set(), set()
    low = {i for i, v in enumerate(values) if v <= lo}
    high = {i for i, v in enumerate(values) if v >= hi}
    return low, high


def flag_raters(
    profiles: Sequence[RaterProfile], lower_pct: float = 2.5, upper_pct: float = 97.5
) -> list[RaterProfile]:
    """Return copies of ``profiles`` with tail flags set, per index separately.

    Raters with pooled thresholds take no part in centrality flagging.
    """
    flags: list[set[str]] = [set() for _ in profiles]
    for index, (low_name, high_name) in FLAG_NAMES.items():
        members = [i for i, p in enumerate(profiles) if index == "severity" or not p.pooled]
        values = [getattr(profiles[i], index) for i in members]
        low, high = tail_flags(values, lower_pct, upper_pct)
        for k in low:
            flags[members[k]].add(low_name)
        for k in high:
            flags[members[k]].add(high_name)
    return [replace(p, flags=frozenset(f)) for p, f in zip(profiles, flags)]


def profiles_csv(profiles: Iterable[RaterProfile]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["rater_id", "severity", "centrality", "n_ratings", "flags"])
    for p in profiles:
        marks = set(p.flags) | ({"pooled"} if p.pooled else set())
        w.writerow([p.rater_id, repr(p.severity), repr(p.centrality), p.n_ratings,
                    ";".join(sorted(marks))])
    return buf.getvalue()


def severity_centrality_csv(by_policy: dict[str, list[RaterProfile]]) -> str:
    """Plot-ready rows: one point per (policy, rater)."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["policy_id", "rater_id", "severity", "centrality", "n"])
    for pol in sorted(by_policy):
        for p in by_policy[pol]:
            w.writerow([pol, p.rater_id, repr(p.severity), repr(p.centrality), p.n_ratings])
    return buf.getvalue()


@dataclass(frozen=True, eq=False)
class Q3Report:
    item_ids: tuple[str, ...]
    matrix: np.ndarray
    mean_q3: float
    max_positive_q3: float | None

    def to_dict(self) -> dict:
        mat = [[None if (i == j or np.isnan(v)) else float(v) for j, v in enumerate(row)]
               for i, row in enumerate(self.matrix)]
        return {
            "item_ids": list(self.item_ids),
            "matrix": mat,
            "mean_q3": None if np.isnan(self.mean_q3) else self.mean_q3,
            "max_positive_q3": self.max_positive_q3,
        }


def _params_for(fit: FitResult, dataset: RatingDataset):
    """Re-index fitted parameters onto the dataset's dense indices."""
    p = fit.params
    pos = lambda ids, want: np.array([ids.index(w) for w in want])
    th = p.theta[pos(fit.output_ids, dataset.output_ids)]
    de = p.delta[pos(fit.item_ids, dataset.item_ids)]
    if isinstance(p, MfrmParams):
        sel = pos(fit.rater_ids, dataset.rater_ids)
        return MfrmParams(th, de, p.rho[sel], p.tau[sel])
    return PcmParams(th, de, p.tau[pos(fit.item_ids, dataset.item_ids)])


def residual_table(dataset: RatingDataset, fit: FitResult) -> np.ndarray:
    """Rater-averaged residual (observed minus expected score), outputs x items.

    Cells without any rating are NaN.
    """
    params = _params_for(fit, dataset)
    probs = record_probabilities(dataset, params)
    expected = probs @ np.arange(dataset.scale.k_categories)
    resid = dataset.category_index - expected
    shape = (dataset.n_outputs, dataset.n_items)
    total = np.zeros(shape)
    count = np.zeros(shape)
    np.add.at(total, (dataset.output_index, dataset.item_index), resid)
    np.add.at(count, (dataset.output_index, dataset.item_index), 1)
    with np.errstate(invalid="ignore"):
        return np.where(count > 0, total / np.maximum(count, 1), np.nan)


def yen_q3(dataset: RatingDataset, fit: FitResult) -> Q3Report:
    """Yen's Q3: correlations between item residual columns across outputs.

    Pairs with fewer than 3 common outputs, or a constant residual column,
    are reported as missing (NaN).
    """
    if dataset.n_items < 2:
        raise ValueError("Q3 needs at least two items")
    table = residual_table(dataset, fit)
    n_items = dataset.n_items
    q3 = np.full((n_items, n_items), np.nan)
    for a in range(n_items):
        for b in range(a + 1, n_items):
            both = ~np.isnan(table[:, a]) & ~np.isnan(table[:, b])
            if both.sum() < 3:
                continue
            x, y = table[both, a], table[both, b]
            sx, sy = x.std(), y.std()
            if sx < 1e-9 or sy < 1e-9:
                continue
            q3[a, b] = q3[b, a] = float(np.clip(np.corrcoef(x, y)[0, 1], -1.0, 1.0))
    off = q3[np.triu_indices(n_items, 1)]
    off = off[~np.isnan(off)]
    mean = float(off.mean()) if off.size else math.nan
    pos = off[off > 0]
    return Q3Report(dataset.item_ids, q3, mean, float(pos.max()) if pos.size else None)


def item_score_table(dataset: RatingDataset) -> np.ndarray:
    """Rounded-mean scores, outputs x items, for outputs rated on every item."""
    collapsed = collapse_to_rounded_mean(dataset)
    table = np.full((collapsed.n_outputs, collapsed.n_items), np.nan)
    table[collapsed.output_index, collapsed.item_index] = [r.category for r in collapsed.records]
    return table[~np.isnan(table).any(axis=1)]


def cronbach_alpha(table) -> float:
    """Cronbach's alpha of an outputs x items score table."""
    x = np.asarray(table, dtype=np.float64)
    n, k = x.shape
    if k < 2 or n < 3:
        raise ValueError("alpha needs at least 2 items and 3 outputs")
    total_var = x.sum(axis=1).var(ddof=1)
    if total_var <= 0:
        raise ValueError("total score has zero variance")
    return float(k / (k - 1) * (1.0 - x.var(axis=0, ddof=1).sum() / total_var))


@dataclass(frozen=True)
class EigenScreen:
    lambda1: float
    lambda2: float
    ratio: float

    @property
    def unidimensional(self) -> bool:
        return self.ratio >= 3.0


def eigenvalue_screen(corr) -> EigenScreen:
    """Two largest eigenvalues of an item correlation matrix and their ratio."""
    c = np.asarray(corr, dtype=np.float64)
    if c.ndim != 2 or c.shape[0] != c.shape[1] or not np.allclose(c, c.T, atol=1e-10):
        raise ValueError("correlation matrix must be square and symmetric")
    ev = np.sort(np.linalg.eigvalsh(c))[::-1]
    l1 = float(ev[0])
    l2 = float(max(ev[1], 0.0)) if ev.size > 1 else 0.0
    if abs(l2) < 1e-12:
        l2 = 0.0
    ratio = math.inf if l2 == 0 else l1 / l2
    return EigenScreen(l1, l2, ratio)


def assumption_checks(dataset: RatingDataset, fit: FitResult) -> dict:
    """Alpha, eigenvalue screen and Q3 for one fitted dataset, JSON-ready."""
    out: dict = {"n_outputs": dataset.n_outputs}
    table = item_score_table(dataset)
    try:
        out["cronbach_alpha"] = cronbach_alpha(table)
    except ValueError as exc:
        out["cronbach_alpha"] = None
        out["alpha_note"] = str(exc)
    with np.errstate(invalid="ignore", divide="ignore"):
        corr = np.corrcoef(table, rowvar=False) if table.shape[0] >= 3 else None
    if corr is not None and np.all(np.isfinite(corr)):
        s = eigenvalue_screen(corr)
        out["eigen"] = {
            "lambda1": s.lambda1, "lambda2": s.lambda2,
            "ratio": None if math.isinf(s.ratio) else s.ratio,
            "unidimensional": s.unidimensional,
        }
    else:
        out["eigen"] = None
    try:
        out["q3"] = yen_q3(dataset, fit).to_dict()
    except ValueError as exc:
        out["q3"] = None
        out["q3_note"] = str(exc)
    return out
