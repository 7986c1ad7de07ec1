"""Joint maximum likelihood fitting by Newton coordinate sweeps.

Each sweep updates, in order, every output quality ``theta``, every item
stringency ``delta``, every rater severity ``rho`` (MFRM only) and every
threshold row. Within a family the coordinates are conditionally
independent, so each one takes its own capped Newton step and is halved
until its own likelihood contribution does not decrease. A sweep ends by
re-centering ``delta``, ``rho`` and each threshold row to sum to zero,
which leaves every category probability unchanged.

Two adjustments keep the estimates finite. Facet elements whose ratings
are all at the lowest (or highest) category have ``extreme_adjust`` score
points of probability mass moved to the adjacent category. Threshold
groups that never use some categories get ``extreme_adjust`` ratings'
worth of mass spread onto those categories. Both act on the per-record
target distribution, so the fitted objective stays a proper
cross-entropy and the re-centering stays exact.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from typing import Literal

import numpy as np

from . import _kernels
from .data import RatingDataset, check_linkage
from .model import MfrmParams, PcmParams, cumulative_thresholds, log_likelihood, one_hot


class FitError(RuntimeError):
    pass


class DisconnectedDesignError(FitError):
    pass


class DegenerateRaterError(FitError):
    pass


@dataclass(frozen=True)
class FitConfig:
    max_sweeps: int = 500
    tol: float = 1e-4
    step_cap: float = 1.0
    extreme_adjust: float = 0.3
    min_categories_per_rater: int = 3
    pooled_fallback: bool = True
    max_halvings: int = 30

    def __post_init__(self):
        if not self.tol > 0:
            raise ValueError("tol must be > 0")
        if not self.step_cap > 0:
            raise ValueError("step_cap must be > 0")
        if not 0 < self.extreme_adjust < 0.5:
            raise ValueError("extreme_adjust must lie in (0, 0.5)")
        if self.max_sweeps < 1:
            raise ValueError("max_sweeps must be >= 1")
        if self.min_categories_per_rater < 1:
            raise ValueError("min_categories_per_rater must be >= 1")


@dataclass(frozen=True, eq=False)
class FitResult:
    model: Literal["mfrm", "pcm"]
    params: MfrmParams | PcmParams
    loglik_trace: tuple[float, ...]
    converged: bool
    sweeps_used: int
    max_change: float
    se_theta: np.ndarray
    se_delta: np.ndarray
    se_rho: np.ndarray | None
    output_ids: tuple[str, ...]
    item_ids: tuple[str, ...]
    rater_ids: tuple[str, ...]
    k_categories: int
    loglik: float
    warnings: tuple[str, ...] = ()
    pooled_raters: tuple[str, ...] = ()
    config: FitConfig = field(default_factory=FitConfig)

    @property
    def threshold_ids(self) -> tuple[str, ...]:
        return self.rater_ids if self.model == "mfrm" else self.item_ids

    def theta_by_id(self) -> dict[str, float]:
        return dict(zip(self.output_ids, self.params.theta.tolist()))

    def to_dict(self) -> dict:
        p = self.params
        d = {
            "model": self.model,
            "k_categories": self.k_categories,
            "converged": self.converged,
            "sweeps_used": self.sweeps_used,
            "max_change": self.max_change,
            "loglik": self.loglik,
            "loglik_trace": list(self.loglik_trace),
            "constraint_residuals": p.constraint_residuals(),
            "warnings": list(self.warnings),
            "pooled_raters": list(self.pooled_raters),
            "config": self.config.__dict__.copy(),
            "theta": dict(zip(self.output_ids, p.theta.tolist())),
            "se_theta": dict(zip(self.output_ids, self.se_theta.tolist())),
            "delta": dict(zip(self.item_ids, p.delta.tolist())),
            "se_delta": dict(zip(self.item_ids, self.se_delta.tolist())),
            "tau": dict(zip(self.threshold_ids, p.tau.tolist())),
        }
        if self.model == "mfrm":
            d["rho"] = dict(zip(self.rater_ids, p.rho.tolist()))
            d["se_rho"] = dict(zip(self.rater_ids, self.se_rho.tolist()))
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> "FitResult":
        outs = tuple(d["theta"])
        items = tuple(d["delta"])
        vec = lambda key, ids: np.array([d[key][i] for i in ids], dtype=np.float64)
        if d["model"] == "mfrm":
            raters = tuple(d["rho"])
            params = MfrmParams(
                vec("theta", outs),
                vec("delta", items),
                vec("rho", raters),
                np.array([d["tau"][r] for r in raters], dtype=np.float64),
            )
            se_rho = vec("se_rho", raters)
        else:
            raters = ()
            params = PcmParams(
                vec("theta", outs),
                vec("delta", items),
                np.array([d["tau"][i] for i in items], dtype=np.float64),
            )
            se_rho = None
        return cls(
            model=d["model"],
            params=params,
            loglik_trace=tuple(d["loglik_trace"]),
            converged=d["converged"],
            sweeps_used=d["sweeps_used"],
            max_change=d["max_change"],
            se_theta=vec("se_theta", outs),
            se_delta=vec("se_delta", items),
            se_rho=se_rho,
            output_ids=outs,
            item_ids=items,
            rater_ids=raters,
            k_categories=d["k_categories"],
            loglik=d["loglik"],
            warnings=tuple(d["warnings"]),
            pooled_raters=tuple(d["pooled_raters"]),
            config=FitConfig(**d["config"]),
        )

    def params_csv(self) -> str:
        """One row per parameter: kind, id, estimate, se."""
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["kind", "id", "estimate", "se"])
        p = self.params
        for oid, v, s in zip(self.output_ids, p.theta, self.se_theta):
            w.writerow(["theta", oid, repr(float(v)), repr(float(s))])
        for iid, v, s in zip(self.item_ids, p.delta, self.se_delta):
            w.writerow(["delta", iid, repr(float(v)), repr(float(s))])
        if self.model == "mfrm":
            for rid, v, s in zip(self.rater_ids, p.rho, self.se_rho):
                w.writerow(["rho", rid, repr(float(v)), repr(float(s))])
        for gid, row in zip(self.threshold_ids, p.tau):
            for h, v in enumerate(row, start=1):
                w.writerow(["tau", f"{gid}:{h}", repr(float(v)), ""])
        return buf.getvalue()


# ---------------------------------------------------------------------------
# engine internals


@dataclass
class _Design:
    out: np.ndarray
    item: np.ndarray
    rater: np.ndarray | None
    grp: np.ndarray
    n_out: int
    n_item: int
    n_rater: int
    n_grp: int
    # facet that absorbs a threshold row's mean: "rater", "item" or "global"
    owner: str
    y: np.ndarray
    k: int


@dataclass
class _State:
    theta: np.ndarray
    delta: np.ndarray
    rho: np.ndarray
    tau: np.ndarray

    def copy(self) -> "_State":
        return _State(self.theta.copy(), self.delta.copy(), self.rho.copy(), self.tau.copy())

    def flat(self) -> np.ndarray:
        return np.concatenate([self.theta, self.delta, self.rho, self.tau.ravel()])


def _eta(d: _Design, theta, delta, rho) -> np.ndarray:
    eta = theta[d.out] - delta[d.item]
    if d.rater is not None:
        eta = eta - rho[d.rater]
    return np.ascontiguousarray(eta)


def _objective(d: _Design, s: _State) -> float:
    eta = _eta(d, s.theta, s.delta, s.rho)
    return float(_kernels.record_loglik(eta, d.grp, cumulative_thresholds(s.tau), d.y).sum())


def _extreme_shift(y, cat, index, n_el, k, adjust, label, ids, notes):
    """Move ``adjust`` mass off the extreme category of all-extreme elements."""
    counts = np.bincount(index, minlength=n_el)
    lo = np.bincount(index, weights=(cat == 0).astype(float), minlength=n_el) == counts
    hi = np.bincount(index, weights=(cat == k - 1).astype(float), minlength=n_el) == counts
    for mask, src, dst, word in ((lo, 0, 1, "minimum"), (hi, k - 1, k - 2, "maximum")):
        els = np.flatnonzero(mask & (counts > 0))
        if els.size == 0:
            continue
        rec = np.isin(index, els)
        eps = adjust / counts[index[rec]]
        y[rec, src] -= eps
        y[rec, dst] += eps
        shown = ", ".join(ids[e] for e in els[:5]) + (" ..." if els.size > 5 else "")
        notes.append(
            f"{els.size} {label}(s) with all-{word} ratings adjusted by "
            f"{adjust} score points: {shown}"
        )


def _smooth_unused(y, cat, grp, n_grp, k, adjust, active, label, ids, notes):
    """Spread ``adjust`` ratings' worth of mass onto each unused category."""
    counts = np.zeros((n_grp, k))
    np.add.at(counts, (grp, cat), 1.0)
    for g in range(n_grp):
        if not active[g]:
            continue
        unused = np.flatnonzero(counts[g] == 0)
        if unused.size == 0:
            continue
        n_g = counts[g].sum()
        lam = min(adjust * unused.size / n_g, 0.5)
        rec = grp == g
        y[rec] *= 1.0 - lam
        y[np.ix_(rec, unused)] += lam / unused.size
        notes.append(
            f"{label} {ids[g]}: categories {[int(c) + 1 for c in unused]} (1-based) unused; "
            f"threshold statistics adjusted"
        )


def _build_y(d_out, d_item, d_rater, cat, k, adjust, grp, n_grp, active, facets, grp_label,
             grp_ids, notes):
    y = np.zeros((cat.size, k))
    y[np.arange(cat.size), cat] = 1.0
    for label, index, n_el, ids in facets:
        _extreme_shift(y, cat, index, n_el, k, adjust, label, ids, notes)
    _smooth_unused(y, cat, grp, n_grp, k, adjust, active, grp_label, grp_ids, notes)
    return np.ascontiguousarray(y)


def _update_facet(d: _Design, s: _State, which: str, cap: float, max_halvings: int) -> None:
    if which == "theta":
        index, n_el, sign = d.out, d.n_out, 1.0
    elif which == "delta":
        index, n_el, sign = d.item, d.n_item, -1.0
    else:
        index, n_el, sign = d.rater, d.n_rater, -1.0
    values = getattr(s, which)
    cum = cumulative_thresholds(s.tau)
    ll, resid, var = _kernels.record_terms(_eta(d, s.theta, s.delta, s.rho), d.grp, cum, d.y)
    grad = sign * np.bincount(index, resid, n_el)
    info = np.bincount(index, var, n_el)
    step = np.divide(grad, info, out=np.zeros(n_el), where=info > 1e-12)
    step = np.clip(step, -cap, cap)
    old = np.bincount(index, ll, n_el)
    pending = step != 0
    base = values.copy()
    for _ in range(max_halvings + 1):
        if not pending.any():
            break
        trial = base.copy()
        trial[pending] += step[pending]
        setattr(s, which, trial)
        new_ll = _kernels.record_loglik(_eta(d, s.theta, s.delta, s.rho), d.grp, cum, d.y)
        worse = np.bincount(index, new_ll, n_el) < old
        accepted = pending & ~worse
        base[accepted] = trial[accepted]
        pending &= worse
        step *= 0.5
    setattr(s, which, base)


def _update_tau(d: _Design, s: _State, free: np.ndarray, cap: float, max_halvings: int) -> None:
    if d.k < 3:
        # a single threshold is fixed at 0 by the row constraint
        return
    eta = _eta(d, s.theta, s.delta, s.rho)
    ll, grad, info = _kernels.tau_terms(eta, d.grp, cumulative_thresholds(s.tau), d.y, d.n_grp)
    step = np.zeros_like(s.tau)
    for g in np.flatnonzero(free):
        try:
            step[g] = np.linalg.solve(info[g], grad[g])
        except np.linalg.LinAlgError:
            step[g] = np.linalg.lstsq(info[g], grad[g], rcond=None)[0]
        big = np.abs(step[g]).max()
        if big > cap:
            step[g] *= cap / big
    pending = free & np.any(step != 0, axis=1)
    base = s.tau.copy()
    for _ in range(max_halvings + 1):
        if not pending.any():
            break
        trial = base.copy()
        trial[pending] += step[pending]
        new_ll = np.bincount(
            d.grp, _kernels.record_loglik(eta, d.grp, cumulative_thresholds(trial), d.y), d.n_grp
        )
        worse = new_ll < ll
        accepted = pending & ~worse
        base[accepted] = trial[accepted]
        pending &= worse
        step *= 0.5
    s.tau = base


def _recenter(d: _Design, s: _State) -> None:
    m = s.tau.mean(axis=1)
    s.tau -= m[:, None]
    if d.owner == "rater":
        s.rho += m
    elif d.owner == "item":
        s.delta += m
    else:
        s.theta -= m[0]
    md = s.delta.mean()
    s.delta -= md
    s.theta -= md
    if d.rater is not None:
        mr = s.rho.mean()
        s.rho -= mr
        s.theta -= mr


def _run(d: _Design, s: _State, free: np.ndarray, cfg: FitConfig):
    trace = []
    converged = False
    change = math.inf
    sweeps = 0
    for sweeps in range(1, cfg.max_sweeps + 1):
        before = s.flat()
        _update_facet(d, s, "theta", cfg.step_cap, cfg.max_halvings)
        _update_facet(d, s, "delta", cfg.step_cap, cfg.max_halvings)
        if d.rater is not None:
            _update_facet(d, s, "rho", cfg.step_cap, cfg.max_halvings)
        _update_tau(d, s, free, cfg.step_cap, cfg.max_halvings)
        _recenter(d, s)
        trace.append(_objective(d, s))
        change = float(np.abs(s.flat() - before).max())
        if change <= cfg.tol:
            converged = True
            break
    return trace, converged, sweeps, change


def _initial_theta(out, cat, n_out, k) -> np.ndarray:
    total = np.bincount(out, cat.astype(float), n_out)
    top = (k - 1) * np.bincount(out, minlength=n_out)
    return np.log((total + 0.5) / (top - total + 0.5))


def _standard_errors(d: _Design, s: _State):
    eta = _eta(d, s.theta, s.delta, s.rho)
    _, _, var = _kernels.record_terms(eta, d.grp, cumulative_thresholds(s.tau), d.y)

    def se(index, n):
        info = np.bincount(index, var, n)
        return np.divide(1.0, np.sqrt(info), out=np.full(n, np.inf), where=info > 0)

    se_rho = se(d.rater, d.n_rater) if d.rater is not None else None
    return se(d.out, d.n_out), se(d.item, d.n_item), se_rho


def _require_connected(dataset: RatingDataset) -> None:
    report = check_linkage(dataset)
    if report.component_count != 1:
        raise DisconnectedDesignError(
            f"rater-output graph has {report.component_count} components; "
            "a common scale needs one"
        )


def fit_mfrm(dataset: RatingDataset, config: FitConfig = FitConfig()) -> FitResult:
    """Fit the rater-related three-facet partial credit model by JMLE."""
    _require_connected(dataset)
    k = dataset.scale.k_categories
    cat = dataset.category_index
    out, item, rater = dataset.output_index, dataset.item_index, dataset.rater_index
    n_out, n_item, n_rater = dataset.n_outputs, dataset.n_items, dataset.n_raters
    notes: list[str] = []

    used = np.zeros((n_rater, k), dtype=bool)
    used[rater, cat] = True
    min_cats = min(config.min_categories_per_rater, k)
    degenerate = used.sum(axis=1) < min_cats
    pooled_ids = tuple(dataset.rater_ids[j] for j in np.flatnonzero(degenerate))
    if degenerate.any() and not config.pooled_fallback:
        raise DegenerateRaterError(
            f"raters {list(pooled_ids)} used fewer than {min_cats} categories"
        )
    facets = [
        ("output", out, n_out, dataset.output_ids),
        ("item", item, n_item, dataset.item_ids),
        ("rater", rater, n_rater, dataset.rater_ids),
    ]
    state = _State(
        _initial_theta(out, cat, n_out, k), np.zeros(n_item), np.zeros(n_rater),
        np.zeros((n_rater, k - 1)),
    )
    trace: list[float] = []
    if degenerate.any():
        # pooled thresholds: one shared row fitted to all ratings
        zeros = np.zeros(len(dataset), dtype=np.int64)
        y0 = _build_y(out, item, rater, cat, k, config.extreme_adjust, zeros, 1,
                      np.ones(1, bool), facets, "pooled scale", ("all raters",), [])
        d0 = _Design(out, item, rater, zeros, n_out, n_item, n_rater, 1, "global", y0, k)
        s0 = _State(state.theta, state.delta, state.rho, np.zeros((1, k - 1)))
        t0, ok0, _, _ = _run(d0, s0, np.ones(1, bool), config)
        if not ok0:
            notes.append("pooled-threshold pre-fit did not converge")
        state = _State(s0.theta, s0.delta, s0.rho, np.repeat(s0.tau, n_rater, axis=0))
        notes.append(
            f"raters {list(pooled_ids)} used fewer than {min_cats} categories; "
            "thresholds tied to the pooled threshold vector"
        )
    free = ~degenerate
    y = _build_y(out, item, rater, cat, k, config.extreme_adjust, rater, n_rater, free, facets,
                 "rater", dataset.rater_ids, notes)
    d = _Design(out, item, rater, rater, n_out, n_item, n_rater, n_rater, "rater", y, k)
    trace, converged, sweeps, change = _run(d, state, free, config)
    if not converged:
        notes.append(f"did not converge in {sweeps} sweeps (max change {change:.3g})")
    se_t, se_d, se_r = _standard_errors(d, state)
    params = MfrmParams(state.theta, state.delta, state.rho, state.tau)
    return FitResult(
        model="mfrm",
        params=params,
        loglik_trace=tuple(trace),
        converged=converged,
        sweeps_used=sweeps,
        max_change=change,
        se_theta=se_t,
        se_delta=se_d,
        se_rho=se_r,
        output_ids=dataset.output_ids,
        item_ids=dataset.item_ids,
        rater_ids=dataset.rater_ids,
        k_categories=k,
        loglik=log_likelihood(dataset, params),
        warnings=tuple(notes),
        pooled_raters=pooled_ids,
        config=config,
    )


def fit_pcm(dataset: RatingDataset, config: FitConfig = FitConfig()) -> FitResult:
    """Fit the partial credit model (item thresholds, no rater terms) by JMLE.

    Expects one rating per (output, item), such as the output of
    :func:`~raterirt.data.collapse_to_rounded_mean`.
    """
    cells = set(zip(dataset.output_index.tolist(), dataset.item_index.tolist()))
    if len(cells) != len(dataset):
        raise ValueError("fit_pcm expects one rating per (output, item); collapse raters first")
    _require_connected(dataset)
    k = dataset.scale.k_categories
    cat = dataset.category_index
    out, item = dataset.output_index, dataset.item_index
    n_out, n_item = dataset.n_outputs, dataset.n_items
    notes: list[str] = []
    facets = [("output", out, n_out, dataset.output_ids), ("item", item, n_item, dataset.item_ids)]
    free = np.ones(n_item, dtype=bool)
    y = _build_y(out, item, None, cat, k, config.extreme_adjust, item, n_item, free, facets,
                 "item", dataset.item_ids, notes)
    d = _Design(out, item, None, item, n_out, n_item, 0, n_item, "item", y, k)
    state = _State(_initial_theta(out, cat, n_out, k), np.zeros(n_item), np.zeros(0),
                   np.zeros((n_item, k - 1)))
    trace, converged, sweeps, change = _run(d, state, free, config)
    if not converged:
        notes.append(f"did not converge in {sweeps} sweeps (max change {change:.3g})")
    se_t, se_d, _ = _standard_errors(d, state)
    params = PcmParams(state.theta, state.delta, state.tau)
    return FitResult(
        model="pcm",
        params=params,
        loglik_trace=tuple(trace),
        converged=converged,
        sweeps_used=sweeps,
        max_change=change,
        se_theta=se_t,
        se_delta=se_d,
        se_rho=None,
        output_ids=dataset.output_ids,
        item_ids=dataset.item_ids,
        rater_ids=(),
        k_categories=k,
        loglik=log_likelihood(dataset, params),
        warnings=tuple(notes),
        config=config,
    )
