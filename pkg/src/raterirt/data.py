"""Ordinal rating tables: ingestion, validation, linkage and collapsing.

Ids are opaque strings. Dense indices are assigned in sorted id order, so
they do not depend on the order in which records arrive.
"""

from __future__ import annotations

import csv
import io
import itertools
import json
import math
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import BinaryIO, Iterable, Sequence, TextIO

import numpy as np

COLUMNS = ("output_id", "item_id", "rater_id", "policy_id", "category")
CONSENSUS_RATER = "__consensus__"


class RatingDataError(ValueError):
    """Invalid rating input. ``row`` is the 1-based data row, if known."""

    def __init__(self, message: str, row: int | None = None):
        self.row = row
        if row is not None:
            message = f"row {row}: {message}"
        super().__init__(message)


@dataclass(frozen=True)
class ScaleSpec:
    k_categories: int
    min_label: int = 1

    def __post_init__(self):
        if self.k_categories < 2:
            raise ValueError("a rating scale needs at least 2 categories")

    @property
    def max_label(self) -> int:
        return self.min_label + self.k_categories - 1

    @property
    def labels(self) -> range:
        return range(self.min_label, self.max_label + 1)

    def contains(self, category: int) -> bool:
        return self.min_label <= category <= self.max_label


@dataclass(frozen=True)
class RatingRecord:
    output_id: str
    item_id: str
    rater_id: str
    policy_id: str | None
    category: int


def _dense(ids: Iterable[str]) -> tuple[tuple[str, ...], dict[str, int]]:
    ordered = tuple(sorted(set(ids)))
    return ordered, {v: i for i, v in enumerate(ordered)}


def _frozen(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class RatingDataset:
    """Validated, immutable collection of ratings with dense index tables.

    Index arrays (``output_index``, ``item_index``, ``rater_index``,
    ``category_index``) are read-only and aligned with ``records``.
    ``category_index`` holds ``category - scale.min_label`` (0-based).
    """

    scale: ScaleSpec
    records: tuple[RatingRecord, ...]
    output_ids: tuple[str, ...] = field(init=False)
    item_ids: tuple[str, ...] = field(init=False)
    rater_ids: tuple[str, ...] = field(init=False)
    policy_ids: tuple[str, ...] = field(init=False)

    def __post_init__(self):
        records = tuple(self.records)
        if not records:
            raise RatingDataError("dataset has no records")
        seen: dict[tuple[str, str, str], int] = {}
        policy_of: dict[str, str | None] = {}
        for row, rec in enumerate(records, start=1):
            if not (rec.output_id and rec.item_id and rec.rater_id):
                raise RatingDataError("empty id", row)
            if not isinstance(rec.category, (int, np.integer)) or isinstance(rec.category, bool):
                raise RatingDataError(f"category {rec.category!r} is not an integer", row)
            if not self.scale.contains(int(rec.category)):
                raise RatingDataError(
                    f"category {rec.category} outside scale "
                    f"{self.scale.min_label}..{self.scale.max_label}",
                    row,
                )
            key = (rec.output_id, rec.item_id, rec.rater_id)
            if key in seen:
                raise RatingDataError(
                    f"duplicate (output, item, rater) {key} (first seen at row {seen[key]})", row
                )
            seen[key] = row
            prev = policy_of.setdefault(rec.output_id, rec.policy_id)
            if prev != rec.policy_id:
                raise RatingDataError(
                    f"output {rec.output_id!r} assigned to policies {prev!r} and {rec.policy_id!r}",
                    row,
                )
        object.__setattr__(self, "records", records)
        outs, omap = _dense(r.output_id for r in records)
        items, imap = _dense(r.item_id for r in records)
        raters, rmap = _dense(r.rater_id for r in records)
        pols, pmap = _dense(r.policy_id for r in records if r.policy_id)
        object.__setattr__(self, "output_ids", outs)
        object.__setattr__(self, "item_ids", items)
        object.__setattr__(self, "rater_ids", raters)
        object.__setattr__(self, "policy_ids", pols)
        n = len(records)
        ints = dict(
            output_index=np.fromiter((omap[r.output_id] for r in records), np.int64, n),
            item_index=np.fromiter((imap[r.item_id] for r in records), np.int64, n),
            rater_index=np.fromiter((rmap[r.rater_id] for r in records), np.int64, n),
            category_index=np.fromiter(
                (int(r.category) - self.scale.min_label for r in records), np.int64, n
            ),
        )
        for name, arr in ints.items():
            object.__setattr__(self, name, _frozen(arr))
        # -1 marks a record without policy
        pol = np.fromiter((pmap.get(r.policy_id, -1) for r in records), np.int64, n)
        object.__setattr__(self, "policy_index", _frozen(pol))

    def __len__(self) -> int:
        return len(self.records)

    @property
    def n_outputs(self) -> int:
        return len(self.output_ids)

    @property
    def n_items(self) -> int:
        return len(self.item_ids)

    @property
    def n_raters(self) -> int:
        return len(self.rater_ids)

    @property
    def has_policies(self) -> bool:
        return bool(np.all(self.policy_index >= 0))

    def output_policy(self) -> dict[str, str | None]:
        return {r.output_id: r.policy_id for r in self.records}

    def subset(self, mask: Sequence[bool] | np.ndarray) -> "RatingDataset":
        mask = np.asarray(mask, dtype=bool)
        return RatingDataset(self.scale, tuple(r for r, m in zip(self.records, mask) if m))

    def policy_subset(self, policy_id: str) -> "RatingDataset":
        return RatingDataset(self.scale, tuple(r for r in self.records if r.policy_id == policy_id))


def _open_text(source) -> tuple[TextIO, bool]:
    if isinstance(source, (str, Path)):
        return open(source, "r", encoding="utf-8", newline=""), True
    if isinstance(source, io.TextIOBase):
        return source, False
    return io.TextIOWrapper(source, encoding="utf-8", newline=""), False


def ingest_csv(source: BinaryIO | TextIO | str | Path, scale: ScaleSpec) -> RatingDataset:
    """Read a rating CSV with header ``output_id,item_id,rater_id,policy_id,category``.

    ``source`` may be a path, a binary stream (decoded as UTF-8) or a text
    stream. Row numbers in errors count data rows from 1 (the header is
    row 0). An empty ``policy_id`` is stored as ``None``.
    """
    fh, owned = _open_text(source)
    try:
        try:
            reader = csv.reader(fh)
            header = next(reader, None)
            if header is None:
                raise RatingDataError("empty input")
            header = [h.strip().lstrip("﻿") for h in header]
            missing = [c for c in COLUMNS if c not in header]
            if missing:
                raise RatingDataError(f"header is missing columns {missing}", 0)
            col = [header.index(c) for c in COLUMNS]
            records = []
            for row, fields in enumerate(reader, start=1):
                if not fields:
                    continue
                if len(fields) != len(header):
                    raise RatingDataError(
                        f"expected {len(header)} columns, found {len(fields)}", row
                    )
                out, item, rater, pol, cat = (fields[i].strip() for i in col)
                try:
                    value = int(cat)
                except ValueError:
                    raise RatingDataError(f"category {cat!r} is not an integer", row) from None
                if not scale.contains(value):
                    raise RatingDataError(
                        f"category {value} outside scale {scale.min_label}..{scale.max_label}", row
                    )
                records.append(RatingRecord(out, item, rater, pol or None, value))
        except UnicodeDecodeError as exc:
            raise RatingDataError(f"input is not valid UTF-8: {exc}") from None
    finally:
        if owned:
            fh.close()
        elif isinstance(fh, io.TextIOWrapper) and not isinstance(source, io.TextIOBase):
            fh.detach()
    return RatingDataset(scale, tuple(records))


def write_csv(dataset: RatingDataset, dest: TextIO | str | Path) -> None:
    """Write the dataset in the ingestion schema, preserving record order."""
    if isinstance(dest, (str, Path)):
        with open(dest, "w", encoding="utf-8", newline="") as fh:
            write_csv(dataset, fh)
        return
    writer = csv.writer(dest, lineterminator="\n")
    writer.writerow(COLUMNS)
    for r in dataset.records:
        writer.writerow([r.output_id, r.item_id, r.rater_id, r.policy_id or "", r.category])


def to_csv_text(dataset: RatingDataset) -> str:
    buf = io.StringIO()
    write_csv(dataset, buf)
    return buf.getvalue()


@dataclass(frozen=True)
class LinkageReport:
    component_count: int
    smallest_component_size: int
    rater_component: dict[str, int]
    output_component: dict[str, int]

    @property
    def connected(self) -> bool:
        return self.component_count == 1

    def to_dict(self) -> dict:
        return {
            "component_count": self.component_count,
            "smallest_component_size": self.smallest_component_size,
            "raters": [{"id": k, "component": v} for k, v in self.rater_component.items()],
            "outputs": [{"id": k, "component": v} for k, v in self.output_component.items()],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


class _UnionFind:
    def __init__(self, n: int):
        self.parent = list(range(n))
        self.rank = [0] * n

    def find(self, x: int) -> int:
        root = x
        while self.parent[root] != root:
            root = self.parent[root]
        while self.parent[x] != root:
            self.parent[x], x = root, self.parent[x]
        return root

    def union(self, a: int, b: int) -> None:
        ra, rb = self.find(a), self.find(b)
        if ra == rb:
            return
        if self.rank[ra] < self.rank[rb]:
            ra, rb = rb, ra
        self.parent[rb] = ra
        if self.rank[ra] == self.rank[rb]:
            self.rank[ra] += 1


def check_linkage(dataset: RatingDataset) -> LinkageReport:
    """Connected components of the bipartite rater-output graph.

    Components are labelled 0, 1, ... in order of their first rater
    (sorted by rater id).
    """
    j = dataset.n_raters
    uf = _UnionFind(j + dataset.n_outputs)
    for r, n in set(zip(dataset.rater_index.tolist(), dataset.output_index.tolist())):
        uf.union(r, j + n)
    labels: dict[int, int] = {}
    node_label = []
    for node in range(j + dataset.n_outputs):
        node_label.append(labels.setdefault(uf.find(node), len(labels)))
    sizes = np.bincount(node_label)
    return LinkageReport(
        component_count=len(labels),
        smallest_component_size=int(sizes.min()),
        rater_component={rid: node_label[i] for i, rid in enumerate(dataset.rater_ids)},
        output_component={oid: node_label[j + i] for i, oid in enumerate(dataset.output_ids)},
    )


def round_half_away(value: Fraction) -> int:
    """Round to the nearest integer, halves away from zero."""
    sign = -1 if value < 0 else 1
    return sign * math.floor(abs(value) + Fraction(1, 2))


def collapse_to_rounded_mean(dataset: RatingDataset, rounding=round_half_away) -> RatingDataset:
    """One consensus record per (output, item): the rounded mean over raters."""
    groups: dict[tuple[str, str], list[int]] = {}
    policy = {}
    for r in dataset.records:
        groups.setdefault((r.output_id, r.item_id), []).append(r.category)
        policy[r.output_id] = r.policy_id
    records = tuple(
        RatingRecord(out, item, CONSENSUS_RATER, policy[out], rounding(Fraction(sum(v), len(v))))
        for (out, item), v in groups.items()
    )
    return RatingDataset(dataset.scale, records)


def double_rated_pairs(dataset: RatingDataset) -> list[tuple[str, int, int]]:
    """All unordered rater pairs per multiply-rated (output, item).

    Each pair is ``(item_id, rating_a, rating_b)`` where rater a sorts before
    rater b. Output order is by (output_id, item_id, rater_a, rater_b).
    """
    cells: dict[tuple[str, str], list[tuple[str, int]]] = {}
    for r in dataset.records:
        cells.setdefault((r.output_id, r.item_id), []).append((r.rater_id, r.category))
    pairs = []
    for (out, item) in sorted(cells):
        ratings = sorted(cells[(out, item)])
        for (_, a), (_, b) in itertools.combinations(ratings, 2):
            pairs.append((item, a, b))
    return pairs


def double_rated_cells(dataset: RatingDataset) -> int:
    """Number of (output, item) cells rated by at least two raters."""
    counts: dict[tuple[str, str], int] = {}
    for r in dataset.records:
        key = (r.output_id, r.item_id)
        counts[key] = counts.get(key, 0) + 1
    return sum(1 for c in counts.values() if c >= 2)


def double_rated_outputs(dataset: RatingDataset) -> int:
    """Number of outputs with at least one cell rated by two or more raters."""
    raters: dict[str, set[str]] = {}
    for r in dataset.records:
        raters.setdefault(r.output_id, set()).add(r.rater_id)
    return sum(1 for s in raters.values() if len(s) >= 2)
