"""Interrater agreement on double-rated pairs.

Quadratic weighted kappa, exact and adjacent agreement, mean absolute
difference, and a percentile bootstrap interval for the kappa.
"""

from __future__ import annotations

import json
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass
from typing import Iterable, Sequence

import numpy as np

from .data import RatingDataset, ScaleSpec, double_rated_pairs

# Replicates are drawn in fixed-size chunks, each from its own spawned
# substream, so results do not depend on the worker count.
_CHUNK = 250


class DegenerateAgreementWarning(UserWarning):
    """Both marginals sit on one shared category; kappa is set to 1.0."""


@dataclass(frozen=True)
class BootstrapConfig:
    n_boot: int = 2000
    level: float = 0.95
    seed: int = 0

    def __post_init__(self):
        if self.n_boot < 1:
            raise ValueError("bootstrap replicate count must be >= 1")
        if not 0.0 < self.level < 1.0:
            raise ValueError("coverage level must lie in (0, 1)")


@dataclass(frozen=True)
class AgreementSummary:
    qwk: float
    qwk_ci: tuple[float, float]
    exact_pct: float
    within_one_pct: float
    mean_abs_diff: float
    n_pairs: int
    degenerate: bool = False

    def to_dict(self) -> dict:
        d = asdict(self)
        d["qwk_ci"] = list(self.qwk_ci)
        return d


def _as_index_pairs(pairs, scale: ScaleSpec) -> tuple[np.ndarray, np.ndarray]:
    arr = np.asarray([tuple(p)[-2:] for p in pairs], dtype=np.int64).reshape(-1, 2)
    if arr.shape[0] == 0:
        raise ValueError("at least one pair is required")
    a = arr[:, 0] - scale.min_label
    b = arr[:, 1] - scale.min_label
    k = scale.k_categories
    if a.min() < 0 or b.min() < 0 or a.max() >= k or b.max() >= k:
        raise ValueError("ratings outside the scale")
    return a, b


def _weights(k: int) -> np.ndarray:
    idx = np.arange(k)
    return (idx[:, None] - idx[None, :]) ** 2 / (k - 1) ** 2


def _qwk_from_tables(observed: np.ndarray, w: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized kappa over a stack of (..., K, K) count tables."""
    n = observed.sum(axis=(-1, -2))
    rows = observed.sum(axis=-1)
    cols = observed.sum(axis=-2)
    expected = rows[..., :, None] * cols[..., None, :] / n[..., None, None]
    num = (w * observed).sum(axis=(-1, -2))
    den = (w * expected).sum(axis=(-1, -2))
    degenerate = den <= 0
    with np.errstate(divide="ignore", invalid="ignore"):
        kappa = np.where(degenerate, 1.0, 1.0 - num / np.where(degenerate, 1.0, den))
    # all pairs on the diagonal: exactly one by definition
    kappa = np.where(num == 0, 1.0, kappa)
    return kappa, degenerate


def _table(a: np.ndarray, b: np.ndarray, k: int) -> np.ndarray:
    return np.bincount(a * k + b, minlength=k * k).reshape(k, k).astype(np.float64)


def qwk(pairs: Iterable[Sequence[int]], scale: ScaleSpec) -> float:
    """Quadratic weighted kappa of (rating_a, rating_b) pairs.

    Pairs may also carry a leading item id; only the last two fields are
    used. If both marginals are concentrated on the same single category
    the kappa is undefined; 1.0 is returned and a
    :class:`DegenerateAgreementWarning` is issued.
    """
    a, b = _as_index_pairs(list(pairs), scale)
    k = scale.k_categories
    kappa, degenerate = _qwk_from_tables(_table(a, b, k), _weights(k))
    if degenerate:
        warnings.warn("degenerate marginals; kappa set to 1.0", DegenerateAgreementWarning)
    return float(kappa)


def _boot_chunk(a, b, k, w, n_rep, seed_seq):
    rng = np.random.default_rng(seed_seq)
    n = a.size
    idx = rng.integers(0, n, size=(n_rep, n))
    codes = (a * k + b)[idx] + (np.arange(n_rep) * k * k)[:, None]
    tables = np.bincount(codes.ravel(), minlength=n_rep * k * k).reshape(n_rep, k, k)
    return _qwk_from_tables(tables.astype(np.float64), w)[0]


def bootstrap_qwk(pairs, scale: ScaleSpec, config: BootstrapConfig, threads: int = 1) -> np.ndarray:
    """Kappa of ``config.n_boot`` pair-level resamples, in replicate order."""
    a, b = _as_index_pairs(list(pairs), scale)
    k = scale.k_categories
    w = _weights(k)
    sizes = [min(_CHUNK, config.n_boot - s) for s in range(0, config.n_boot, _CHUNK)]
    seeds = np.random.SeedSequence(config.seed).spawn(len(sizes))
    jobs = [(a, b, k, w, m, s) for m, s in zip(sizes, seeds)]
    if threads > 1 and len(jobs) > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            parts = list(ex.map(lambda j: _boot_chunk(*j), jobs))
    else:
        parts = [_boot_chunk(*j) for j in jobs]
    return np.concatenate(parts)


def agreement_summary(
    pairs, scale: ScaleSpec, config: BootstrapConfig = BootstrapConfig(), threads: int = 1
) -> AgreementSummary:
    pairs = list(pairs)
    if len(pairs) < 2:
        raise ValueError("at least two pairs are needed for a bootstrap interval")
    a, b = _as_index_pairs(pairs, scale)
    k = scale.k_categories
    kappa, degenerate = _qwk_from_tables(_table(a, b, k), _weights(k))
    kappa = float(kappa)
    reps = bootstrap_qwk(pairs, scale, config, threads=threads)
    alpha = (1.0 - config.level) / 2.0
    lo, hi = np.quantile(reps, [alpha, 1.0 - alpha])
    diff = np.abs(a - b)
    return AgreementSummary(
        qwk=kappa,
        # the percentile interval need not cover the point estimate
        qwk_ci=(float(min(lo, kappa)), float(max(hi, kappa))),
        exact_pct=float(100.0 * np.mean(diff == 0)),
        within_one_pct=float(100.0 * np.mean(diff <= 1)),
        mean_abs_diff=float(diff.mean()),
        n_pairs=int(a.size),
        degenerate=bool(degenerate),
    )


def agreement_by_item(
    dataset: RatingDataset, config: BootstrapConfig = BootstrapConfig(), threads: int = 1
) -> dict[str, AgreementSummary]:
    """Agreement summaries keyed by item id; items with < 2 pairs are skipped."""
    by_item: dict[str, list[tuple[int, int]]] = {}
    for item, x, y in double_rated_pairs(dataset):
        by_item.setdefault(item, []).append((x, y))
    return {
        item: agreement_summary(p, dataset.scale, config, threads=threads)
        for item, p in sorted(by_item.items())
        if len(p) >= 2
    }


def agreement_json(summaries: dict[str, AgreementSummary]) -> str:
    return json.dumps({k: v.to_dict() for k, v in summaries.items()}, indent=2, sort_keys=True)


def format_table(summaries: dict[str, AgreementSummary]) -> str:
    head = f"{'item':<24}{'n':>6}{'QWK':>8}{'CI':>18}{'exact%':>9}{'<=1%':>8}{'MAD':>7}"
    lines = [head]
    for item, s in summaries.items():
        ci = f"[{s.qwk_ci[0]:.2f}, {s.qwk_ci[1]:.2f}]"
        lines.append(
            f"{item:<24}{s.n_pairs:>6}{s.qwk:>8.3f}{ci:>18}{s.exact_pct:>9.1f}"
            f"{s.within_one_pct:>8.1f}{s.mean_abs_diff:>7.2f}"
        )
    return "\n".join(lines)
