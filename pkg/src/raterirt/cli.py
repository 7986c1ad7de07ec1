"""Command-line pipeline: validate, agree, fit, diagnose, rank, simulate, report.

Exit codes: 0 ok, 1 input error, 2 completed with warnings (disconnected
design, per-policy failures), 3 non-convergence.

Settings come from built-in defaults, then an optional ``--config`` file of
``key = value`` lines (keys as printed by ``config --print-defaults``),
then command-line flags.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import os
import sys
import tempfile
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np

from . import agreement as agr
from . import diagnostics as diag
from .data import (
    RatingDataError,
    RatingDataset,
    ScaleSpec,
    check_linkage,
    collapse_to_rounded_mean,
    double_rated_cells,
    double_rated_outputs,
    ingest_csv,
    write_csv,
)
from .fitting import FitConfig, FitError, FitResult, fit_mfrm, fit_pcm
from .ranking import PerPolicyFits, fit_per_policy, rank_shift, ranking_table, read_policy_metadata
from .simulate import SimConfig, equal_policy_blocks, generate

EXIT_OK, EXIT_INPUT, EXIT_WARN, EXIT_NONCONV = 0, 1, 2, 3


class InputError(Exception):
    pass


@dataclass
class RunConfig:
    input: str = ""
    scale_k: int = 7
    scale_min: int = 1
    model: str = "mfrm"
    per_policy: bool = False
    tol: float = 1e-4
    max_sweeps: int = 500
    step_cap: float = 1.0
    extreme_adjust: float = 0.3
    min_categories_per_rater: int = 3
    bootstrap_b: int = 2000
    level: float = 0.95
    seed: int = 0
    flag_lower: float = 2.5
    flag_upper: float = 97.5
    out: str = "out"
    policy_meta: str = ""
    threads: int = 1

    def fit_config(self) -> FitConfig:
        return FitConfig(
            max_sweeps=self.max_sweeps,
            tol=self.tol,
            step_cap=self.step_cap,
            extreme_adjust=self.extreme_adjust,
            min_categories_per_rater=self.min_categories_per_rater,
        )

    def boot_config(self) -> agr.BootstrapConfig:
        return agr.BootstrapConfig(self.bootstrap_b, self.level, self.seed)

    def scale(self) -> ScaleSpec:
        return ScaleSpec(self.scale_k, self.scale_min)

    def reproducible(self) -> dict:
        """Settings that determine artifact content (paths and threads excluded)."""
        d = asdict(self)
        for k in ("input", "out", "policy_meta", "threads"):
            d.pop(k)
        return d


def _coerce(name: str, raw: str):
    kind = {f.name: f.type for f in fields(RunConfig)}[name]
    if kind in ("bool", bool):
        return raw.strip().lower() in ("1", "true", "yes", "on")
    if kind in ("int", int):
        return int(raw)
    if kind in ("float", float):
        return float(raw)
    return raw.strip()


def read_config_file(path: str) -> dict:
    known = {f.name for f in fields(RunConfig)}
    values = {}
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise InputError(f"{path}:{lineno}: expected key = value")
        key, raw = (s.strip() for s in line.split("=", 1))
        key = key.replace("-", "_")
        if key not in known:
            raise InputError(f"{path}:{lineno}: unknown key {key!r}")
        values[key] = _coerce(key, raw)
    return values


def format_defaults() -> str:
    return "\n".join(f"{k} = {v}" for k, v in asdict(RunConfig()).items()) + "\n"


# ---------------------------------------------------------------------------
# artifact helpers


def write_atomic(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _dumps(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, allow_nan=False, default=_json_default) + "\n"


def _json_default(o):
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, (set, frozenset)):
        return sorted(o)
    raise TypeError(type(o).__name__)


def _load(cfg: RunConfig) -> RatingDataset:
    if not cfg.input:
        raise InputError("--input is required")
    try:
        return ingest_csv(cfg.input, cfg.scale())
    except FileNotFoundError:
        raise InputError(f"input file not found: {cfg.input}") from None
    except RatingDataError as exc:
        raise InputError(f"{cfg.input}: {exc}") from None


def _need(path: Path) -> str:
    if not path.exists():
        raise InputError(f"missing upstream artifact {path} (run the fit command first)")
    return path.read_text(encoding="utf-8")


def score_distribution_csv(dataset: RatingDataset) -> str:
    """Per rater and item, percentage of ratings in each category."""
    k = dataset.scale.k_categories
    counts = np.zeros((dataset.n_raters, dataset.n_items, k))
    np.add.at(counts, (dataset.rater_index, dataset.item_index, dataset.category_index), 1)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["rater_id", "item_id", "category", "pct"])
    for j, rid in enumerate(dataset.rater_ids):
        for i, iid in enumerate(dataset.item_ids):
            total = counts[j, i].sum()
            if total == 0:
                continue
            for c in range(k):
                w.writerow([rid, iid, dataset.scale.min_label + c, repr(float(100 * counts[j, i, c] / total))])
    return buf.getvalue()


def dataset_summary(dataset: RatingDataset) -> dict:
    return {
        "n_ratings": len(dataset),
        "n_outputs": dataset.n_outputs,
        "n_items": dataset.n_items,
        "n_raters": dataset.n_raters,
        "n_policies": len(dataset.policy_ids),
        "double_rated_cells": double_rated_cells(dataset),
        "double_rated_outputs": double_rated_outputs(dataset),
    }


# ---------------------------------------------------------------------------
# commands


def cmd_validate(cfg: RunConfig, args) -> int:
    ds = _load(cfg)
    report = check_linkage(ds)
    text = report.to_json() + "\n"
    if args.out_given:
        write_atomic(Path(cfg.out) / "linkage.json", text)
    summary = dataset_summary(ds)
    print(json.dumps({**summary, "component_count": report.component_count,
                      "smallest_component_size": report.smallest_component_size}, indent=2))
    if not report.connected:
        print(f"warning: design has {report.component_count} disconnected components",
              file=sys.stderr)
        return EXIT_WARN
    return EXIT_OK


def _agreement(cfg, ds) -> dict[str, agr.AgreementSummary]:
    return agr.agreement_by_item(ds, cfg.boot_config(), threads=cfg.threads)


def cmd_agree(cfg: RunConfig, args) -> int:
    ds = _load(cfg)
    res = _agreement(cfg, ds)
    write_atomic(Path(cfg.out) / "agreement.json", agr.agreement_json(res) + "\n")
    print(agr.format_table(res))
    return EXIT_OK


def _fit_whole(cfg: RunConfig, ds: RatingDataset, kind: str) -> FitResult:
    if kind == "pcm":
        return fit_pcm(collapse_to_rounded_mean(ds), cfg.fit_config())
    return fit_mfrm(ds, cfg.fit_config())


def cmd_fit(cfg: RunConfig, args) -> int:
    ds = _load(cfg)
    out = Path(cfg.out)
    kind = cfg.model
    if cfg.per_policy:
        res = fit_per_policy(ds, kind, cfg.fit_config(), threads=cfg.threads)
        write_atomic(out / f"fit_{kind}_per_policy.json", res.to_json() + "\n")
        for pol, msg in res.failures.items():
            print(f"warning: policy {pol}: {msg}", file=sys.stderr)
        if any(not f.converged for f in res.fits.values()):
            return EXIT_NONCONV
        return EXIT_WARN if res.failures else EXIT_OK
    try:
        fit = _fit_whole(cfg, ds, kind)
    except FitError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_WARN
    write_atomic(out / f"fit_{kind}.json", fit.to_json() + "\n")
    write_atomic(out / f"params_{kind}.csv", fit.params_csv())
    for w in fit.warnings:
        print(f"warning: {w}", file=sys.stderr)
    print(f"{kind}: converged={fit.converged} sweeps={fit.sweeps_used} loglik={fit.loglik:.4f}")
    return EXIT_OK if fit.converged else EXIT_NONCONV


def _diagnose(cfg: RunConfig, ds: RatingDataset, whole: FitResult,
              per_policy: PerPolicyFits | None) -> dict[str, str]:
    """Diagnostic artifacts as {file name: content}."""
    profiles = diag.flag_raters(diag.rater_profiles(whole, ds), cfg.flag_lower, cfg.flag_upper)
    by_policy = {}
    checks = {"all": diag.assumption_checks(ds, whole)}
    if per_policy is not None:
        for pol, fit in sorted(per_policy.fits.items()):
            sub = ds.policy_subset(pol)
            by_policy[pol] = diag.rater_profiles(fit, sub)
            checks[pol] = diag.assumption_checks(sub, fit)
    else:
        by_policy["all"] = profiles
    alphas = [c["cronbach_alpha"] for p, c in checks.items() if p != "all" and c["cronbach_alpha"] is not None]
    q3s = [c["q3"]["mean_q3"] for p, c in checks.items()
           if p != "all" and c["q3"] and c["q3"]["mean_q3"] is not None]
    summary = {
        "per_policy_alpha": None if not alphas else {
            "mean": float(np.mean(alphas)), "median": float(np.median(alphas)),
            "min": float(np.min(alphas)), "max": float(np.max(alphas))},
        "per_policy_mean_q3": None if not q3s else float(np.mean(q3s)),
    }
    doc = {
        "flag_rule": {"lower_pct": cfg.flag_lower, "upper_pct": cfg.flag_upper,
                      "method": "nearest-rank, inclusive tails"},
        "raters": [
            {"rater_id": p.rater_id, "severity": p.severity, "centrality": p.centrality,
             "n_ratings": p.n_ratings, "pooled": p.pooled, "flags": sorted(p.flags)}
            for p in profiles
        ],
        "assumptions": checks,
        "summary": summary,
    }
    return {
        "rater_profiles.csv": diag.profiles_csv(profiles),
        "severity_centrality.csv": diag.severity_centrality_csv(by_policy),
        "diagnostics.json": _dumps(doc),
    }


def cmd_diagnose(cfg: RunConfig, args) -> int:
    ds = _load(cfg)
    out = Path(cfg.out)
    whole = FitResult.from_dict(json.loads(_need(out / "fit_mfrm.json")))
    pp_path = out / "fit_mfrm_per_policy.json"
    per_policy = PerPolicyFits.from_json(pp_path.read_text()) if pp_path.exists() else None
    for name, text in _diagnose(cfg, ds, whole, per_policy).items():
        write_atomic(out / name, text)
    print(f"diagnostics written to {out}")
    return EXIT_OK


def _rank(cfg: RunConfig, ds, pcm: PerPolicyFits, mfrm: PerPolicyFits) -> dict[str, str]:
    meta = read_policy_metadata(cfg.policy_meta) if cfg.policy_meta else None
    table = ranking_table(ds, pcm, mfrm, meta)
    shifts = {}
    for a, b in (("raw", "pcm"), ("raw", "mfrm"), ("pcm", "mfrm")):
        s = rank_shift(table.ranks(a), table.ranks(b))
        shifts[f"{a}->{b}"] = {"kendall_tau": s.kendall_tau, "deltas": s.deltas}
    doc = json.loads(table.to_json())
    doc["rank_shift"] = shifts
    return {"ranking.csv": table.to_csv(), "ranking.json": _dumps(doc)}


def cmd_rank(cfg: RunConfig, args) -> int:
    ds = _load(cfg)
    out = Path(cfg.out)
    pcm = PerPolicyFits.from_json(_need(out / "fit_pcm_per_policy.json"))
    mfrm = PerPolicyFits.from_json(_need(out / "fit_mfrm_per_policy.json"))
    try:
        artifacts = _rank(cfg, ds, pcm, mfrm)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_WARN
    for name, text in artifacts.items():
        write_atomic(out / name, text)
    print(artifacts["ranking.csv"], end="")
    return EXIT_OK


def cmd_simulate(cfg: RunConfig, args) -> int:
    sim = SimConfig(
        n_outputs=args.n_outputs,
        n_raters=args.n_raters,
        n_items=args.n_items,
        k_categories=cfg.scale_k,
        assignment=args.assignment,
        raters_per_output=args.raters_per_output,
        policy_blocks=equal_policy_blocks(args.n_outputs, args.n_policies) if args.n_policies else None,
        seed=cfg.seed,
    )
    try:
        ds, truth = generate(sim)
    except ValueError as exc:
        raise InputError(str(exc)) from None
    out = Path(cfg.out)
    buf = io.StringIO()
    write_csv(ds, buf)
    write_atomic(out / "simulated.csv", buf.getvalue())
    if args.truth:
        write_atomic(out / "truth.json", truth.to_json() + "\n")
    print(f"wrote {len(ds)} ratings to {out / 'simulated.csv'}")
    return EXIT_OK


PAIRING_NOTE = (
    "agreement pairs use every unordered rater pair per (output, item); the source "
    "analysis did not state its pairing rule, so kappa and exact agreement may differ "
    "from published values"
)


def cmd_report(cfg: RunConfig, args) -> int:
    ds = _load(cfg)
    out = Path(cfg.out)
    code = EXIT_OK
    notes = [PAIRING_NOTE]
    artifacts: dict[str, str] = {}

    link = check_linkage(ds)
    artifacts["linkage.json"] = link.to_json() + "\n"
    artifacts["score_distribution.csv"] = score_distribution_csv(ds)
    artifacts["agreement.json"] = agr.agreement_json(_agreement(cfg, ds)) + "\n"
    if not link.connected:
        notes.append(f"design has {link.component_count} components; whole-data fit skipped")
        code = EXIT_WARN
    else:
        whole = fit_mfrm(ds, cfg.fit_config())
        artifacts["fit_mfrm.json"] = whole.to_json() + "\n"
        artifacts["params_mfrm.csv"] = whole.params_csv()
        if not whole.converged:
            code = EXIT_NONCONV
        per_mfrm = None
        if ds.has_policies:
            per_mfrm = fit_per_policy(ds, "mfrm", cfg.fit_config(), threads=cfg.threads)
            per_pcm = fit_per_policy(ds, "pcm", cfg.fit_config(), threads=cfg.threads)
            artifacts["fit_mfrm_per_policy.json"] = per_mfrm.to_json() + "\n"
            artifacts["fit_pcm_per_policy.json"] = per_pcm.to_json() + "\n"
            for kind, res in (("mfrm", per_mfrm), ("pcm", per_pcm)):
                for pol, msg in res.failures.items():
                    notes.append(f"{kind} fit failed for policy {pol}: {msg}")
                if any(not f.converged for f in res.fits.values()):
                    code = EXIT_NONCONV
            if per_mfrm.failures or per_pcm.failures:
                code = max(code, EXIT_WARN)
                notes.append("ranking skipped: some policies lack fits")
            else:
                artifacts.update(_rank(cfg, ds, per_pcm, per_mfrm))
        else:
            notes.append("records carry no policy_id; per-policy fits and ranking skipped")
        artifacts.update(_diagnose(cfg, ds, whole, per_mfrm))

    for name, text in sorted(artifacts.items()):
        write_atomic(out / name, text)
    manifest = {
        "artifacts": {
            name: {"sha256": hashlib.sha256(text.encode("utf-8")).hexdigest(),
                   "bytes": len(text.encode("utf-8"))}
            for name, text in sorted(artifacts.items())
        },
        "config": cfg.reproducible(),
        "dataset": dataset_summary(ds),
        "notes": notes,
    }
    write_atomic(out / "manifest.json", _dumps(manifest))
    print(f"report written to {out} ({len(artifacts)} artifacts)")
    return code


def cmd_config(cfg: RunConfig, args) -> int:
    if args.print_defaults:
        print(format_defaults(), end="")
    else:
        print("\n".join(f"{k} = {v}" for k, v in asdict(cfg).items()))
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser


def _common(p: argparse.ArgumentParser) -> None:
    S = argparse.SUPPRESS
    p.add_argument("--config", default=None, help="flat key = value settings file")
    p.add_argument("--input", default=S, help="rating CSV")
    p.add_argument("--scale-k", type=int, default=S, help="number of categories (7)")
    p.add_argument("--scale-min", type=int, default=S, help="lowest category label (1)")
    p.add_argument("--out", default=S, help="output directory (out)")
    p.add_argument("--seed", type=int, default=S)
    p.add_argument("--bootstrap-b", type=int, default=S)
    p.add_argument("--level", type=float, default=S)
    p.add_argument("--flag-lower", type=float, default=S)
    p.add_argument("--flag-upper", type=float, default=S)
    p.add_argument("--tol", type=float, default=S)
    p.add_argument("--max-sweeps", type=int, default=S)
    p.add_argument("--step-cap", type=float, default=S)
    p.add_argument("--extreme-adjust", type=float, default=S)
    p.add_argument("--policy-meta", default=S, help="policy_id,label,group,size CSV")
    p.add_argument("--threads", type=int, default=S)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="raterirt", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name, helptext in (
        ("validate", "check the CSV and rater-output linkage"),
        ("agree", "interrater agreement per item"),
        ("diagnose", "rater profiles, flags and assumption checks"),
        ("rank", "raw vs PCM vs MFRM policy rankings"),
        ("report", "full pipeline with a hashed manifest"),
    ):
        _common(sub.add_parser(name, help=helptext))
    p = sub.add_parser("fit", help="fit the PCM or the MFRM")
    p.add_argument("model", choices=["pcm", "mfrm"])
    p.add_argument("--per-policy", action="store_true", default=argparse.SUPPRESS)
    _common(p)
    p = sub.add_parser("simulate", help="draw a synthetic dataset")
    p.add_argument("--n-outputs", type=int, default=600)
    p.add_argument("--n-raters", type=int, default=15)
    p.add_argument("--n-items", type=int, default=4)
    p.add_argument("--assignment", choices=["fully_crossed", "random_overlap"], default="fully_crossed")
    p.add_argument("--raters-per-output", type=int, default=2)
    p.add_argument("--n-policies", type=int, default=0, help="split outputs into policies")
    p.add_argument("--truth", action="store_true", help="also write truth.json")
    _common(p)
    p = sub.add_parser("config", help="show settings")
    p.add_argument("--print-defaults", action="store_true")
    _common(p)
    return parser


COMMANDS = {
    "validate": cmd_validate,
    "agree": cmd_agree,
    "fit": cmd_fit,
    "diagnose": cmd_diagnose,
    "rank": cmd_rank,
    "simulate": cmd_simulate,
    "report": cmd_report,
    "config": cmd_config,
}


def resolve_config(args: argparse.Namespace) -> RunConfig:
    values = asdict(RunConfig())
    if args.config:
        values.update(read_config_file(args.config))
    for f in fields(RunConfig):
        if hasattr(args, f.name):
            values[f.name] = getattr(args, f.name)
    return RunConfig(**values)


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    args.out_given = hasattr(args, "out")
    if args.command == "fit":
        args.per_policy = getattr(args, "per_policy", False)
    try:
        cfg = resolve_config(args)
        if args.command == "fit":
            cfg.model = args.model
        return COMMANDS[args.command](cfg, args)
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
