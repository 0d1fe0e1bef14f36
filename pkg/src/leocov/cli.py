"""Command-line entry point: ``sim validate``, ``sim run`` and ``sim report``.

Exit codes are 0 (ok), 1 (bad input or a failed run) and 2 (internal error).
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__, backend
from .coverage import TWO_PI
from .errors import ScriptError
from .scenario import (ScenarioScript, build_script, load_json, resolve_variant, ring_is_valid,
                       variant_names)
from .sim import SimResult, SimulationAborted, phase_table, run_scenario

EMIT_CHOICES = ("timeline_csv", "certificates_json", "summary_json")
BASE_COLUMNS = ["step", "sim_time_tu", "phase", "J", "cum_control_cost"]

EXIT_OK, EXIT_USER, EXIT_INTERNAL = 0, 1, 2


@dataclass
class RunConfig:
    scenario: Path
    out_dir: Path
    variant: str | None = None
    seed: int | None = None
    emit: tuple[str, ...] = EMIT_CHOICES
    quiet: bool = False
    notes: list[str] = field(default_factory=list)


# --------------------------------------------------------------------------
# validation


def precheck(script: ScenarioScript) -> list[str]:
    """Feasibility pre-check of the initial configuration; returns warnings, raises on errors."""
    cfg = script.initial_configuration()
    if not ring_is_valid(cfg):
        raise ScriptError("initial satellites do not form a ring", "constellation")
    bad = [i for i in cfg.order if not cfg.is_feasible(i)]
    if bad:
        raise ScriptError(f"initial positions of {bad} lie outside their feasible arcs",
                          "constellation")
    warnings = []
    for i, j in cfg.non_adjacent_overlaps():
        warnings.append(f"satellites {i} and {j} overlap without being ring neighbours")
    # each tent footprint integrates to alpha * psi_max
    total = sum(s.alpha * s.psi_max for s in script.specs if s.alive)
    theta = np.linspace(0.0, TWO_PI, 8192, endpoint=False)
    got = float(np.mean(script.demand(theta))) * TWO_PI
    if not math.isclose(got, total, rel_tol=1e-6):
        raise ScriptError(f"demand integral {got:.6g} does not match capacity {total:.6g}", "demand")
    return warnings


def _scripts(path: Path, variant: str | None, seed: int | None = None, every: bool = False):
    """Scripts for one variant (None is the base document), or for all of them."""
    doc = load_json(path)
    if not isinstance(doc, dict):
        raise ScriptError("scenario must be a JSON object", str(path))
    names = [None] + variant_names(doc) if every and variant is None else [variant]
    for name in names:
        d = resolve_variant(doc, name)
        if seed is not None and isinstance(d.get("demand"), dict):
            d["demand"]["seed"] = seed
        yield name, build_script(d)


def cmd_validate(path: Path, variant: str | None = None, out=None) -> int:
    out = out or sys.stdout
    try:
        for name, script in _scripts(path, variant, every=True):
            for w in precheck(script):
                print(f"{path}: warning: {w}", file=out)
            label = script.name if name is None else f"{script.name} (variant {name})"
            print(f"{path}: ok: {label}, {len(script.specs)} satellites, "
                  f"{len(script.events)} events", file=out)
    except ScriptError as e:
        where = e.where if e.where and e.where.startswith(str(path)) else f"{path}:{e.where or ''}"
        print(f"{where}: error: {e.message}", file=sys.stderr)
        return EXIT_USER
    return EXIT_OK


# --------------------------------------------------------------------------
# writers


def _fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, float):
        return repr(x)
    return str(x)


def timeline_columns(all_ids) -> list[str]:
    return BASE_COLUMNS + [f"dphi_{i}" for i in sorted(all_ids)] + ["planner_round"]


def write_timeline(res: SimResult, path: Path) -> None:
    ids = sorted(res.all_ids)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(timeline_columns(ids))
        for r in res.timeline:
            row = [r.step, r.sim_time, r.phase, r.J, r.cum_control_cost]
            row += [r.dphi.get(i) for i in ids]
            row.append(r.planner_round)
            w.writerow([_fmt(x) for x in row])


def _clean(obj):
    """JSON-safe copy: non-finite floats become null."""
    if isinstance(obj, float):
        return obj if math.isfinite(obj) else None
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if hasattr(obj, "item"):
        return _clean(obj.item())
    return obj


def summary_dict(res: SimResult) -> dict:
    phases = phase_table(res)
    return {
        "scenario": res.name,
        "baseline": res.baseline,
        "phases": phases,
        "total_control_cost": res.total_control_cost,
        "total_planner_rounds": sum(p["planner_rounds"] for p in phases),
        "max_input_norm": res.max_input_norm,
        "max_solver_residual": res.max_solver_residual,
        "aborted": res.aborted,
    }


def _dump(obj, path: Path) -> None:
    path.write_text(json.dumps(_clean(obj), indent=2) + "\n", encoding="utf-8")


def write_outputs(res: SimResult, cfg: RunConfig) -> list[Path]:
    cfg.out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    if "timeline_csv" in cfg.emit:
        written.append(cfg.out_dir / "timeline.csv")
        write_timeline(res, written[-1])
    if "summary_json" in cfg.emit:
        written.append(cfg.out_dir / "summary.json")
        _dump(summary_dict(res), written[-1])
    if "certificates_json" in cfg.emit:
        written.append(cfg.out_dir / "certificates.json")
        _dump(res.certificates, written[-1])
    return written


def cmd_run(cfg: RunConfig) -> int:
    try:
        [(_, script)] = _scripts(cfg.scenario, cfg.variant, cfg.seed)
    except ScriptError as e:
        print(f"{cfg.scenario}:{e.where or ''}: error: {e.message}", file=sys.stderr)
        return EXIT_USER
    log = (lambda s: None) if cfg.quiet else (lambda s: print(s, file=sys.stderr))
    log(f"running {script.name} ({script.baseline}, kernels: {backend()})")
    try:
        res = run_scenario(script, progress=log)
        status = EXIT_OK
    except SimulationAborted as e:
        res = e.result
        print(f"{cfg.scenario}: run aborted: {e}", file=sys.stderr)
        status = EXIT_USER
    for p in write_outputs(res, cfg):
        log(f"wrote {p}")
    return status


# --------------------------------------------------------------------------
# report


class AlignmentError(ValueError):
    pass


def read_timeline(path: Path) -> list[dict]:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        raise AlignmentError(f"{path}: empty timeline")
    missing = [c for c in BASE_COLUMNS if c not in rows[0]]
    if missing:
        raise AlignmentError(f"{path}: missing columns {missing}")
    return rows


def phase_summary_from_rows(rows: list[dict]) -> list[dict]:
    """Per-phase numbers recomputed from timeline rows, in order of appearance."""
    out: dict[str, dict] = {}
    for r in rows:
        lab = r["phase"]
        J, cost = float(r["J"]), float(r["cum_control_cost"])
        if lab not in out:
            out[lab] = {"phase": lab, "start_time_tu": float(r["sim_time_tu"]), "J_after_event": J,
                        "converged_J": J, "cost_start": cost, "cost_end": cost, "planner_rounds": 0}
        ph = out[lab]
        ph["converged_J"] = J
        ph["cost_end"] = cost
        if r.get("planner_round"):
            ph["planner_rounds"] += 1
    table = []
    for ph in out.values():
        table.append({"phase": ph["phase"], "start_time_tu": ph["start_time_tu"],
                      "J_after_event": ph["J_after_event"], "converged_J": ph["converged_J"],
                      "delta_J": ph["converged_J"] - ph["J_after_event"],
                      "control_cost": ph["cost_end"] - ph["cost_start"],
                      "planner_rounds": ph["planner_rounds"]})
    return table


def _label(path: Path, used: set[str]) -> str:
    base = path.parent.name if path.stem == "timeline" and path.parent.name else path.stem
    lab, k = base, 2
    while lab in used:
        lab, k = f"{base}-{k}", k + 1
    used.add(lab)
    return lab


def build_report(paths: list[Path], labels: list[str] | None = None):
    """Comparison rows (one per phase and variant) and long-format plot rows."""
    if labels is not None and len(labels) != len(paths):
        raise AlignmentError(f"got {len(labels)} labels for {len(paths)} timelines")
    used: set[str] = set()
    runs = []
    for k, p in enumerate(paths):
        lab = labels[k] if labels else _label(p, used)
        runs.append((lab, read_timeline(p)))
    tables = [(lab, phase_summary_from_rows(rows)) for lab, rows in runs]
    ref_lab, ref = tables[0]
    ref_phases = [ph["phase"] for ph in ref]
    for lab, tab in tables[1:]:
        phases = [ph["phase"] for ph in tab]
        if phases != ref_phases:
            raise AlignmentError(f"phase structure of {lab} {phases} does not match "
                                 f"{ref_lab} {ref_phases}")
    comparison = []
    for lab, tab in tables:
        for ph, base in zip(tab, ref):
            comparison.append({"variant": lab, **ph,
                               "converged_J_vs_ref": ph["converged_J"] - base["converged_J"],
                               "control_cost_vs_ref": ph["control_cost"] - base["control_cost"]})
    long_rows = []
    for lab, rows in runs:
        for r in rows:
            long_rows.append({"variant": lab, "step": r["step"], "sim_time_tu": r["sim_time_tu"],
                              "phase": r["phase"], "J": r["J"],
                              "cum_control_cost": r["cum_control_cost"]})
    return comparison, long_rows


def cmd_report(paths: list[Path], out_dir: Path | None, labels=None, out=None) -> int:
    out = out or sys.stdout
    try:
        comparison, long_rows = build_report(paths, labels)
    except (OSError, AlignmentError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USER
    cols = ["variant", "phase", "converged_J", "delta_J", "control_cost", "planner_rounds",
            "converged_J_vs_ref", "control_cost_vs_ref"]
    w = csv.writer(out, lineterminator="\n")
    w.writerow(cols)
    for row in comparison:
        w.writerow([_fmt(row[c]) for c in cols])
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
        _dump(comparison, out_dir / "comparison.json")
        with open(out_dir / "plot_long.csv", "w", newline="", encoding="utf-8") as fh:
            lw = csv.DictWriter(fh, fieldnames=list(long_rows[0]), lineterminator="\n")
            lw.writeheader()
            lw.writerows(long_rows)
    return EXIT_OK


# --------------------------------------------------------------------------


def _emit_list(text: str) -> tuple[str, ...]:
    items = tuple(s.strip() for s in text.split(",") if s.strip())
    bad = [s for s in items if s not in EMIT_CHOICES]
    if bad or not items:
        raise argparse.ArgumentTypeError(f"choose from {','.join(EMIT_CHOICES)}")
    return items


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="sim", description="LEO constellation coverage scenarios.")
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = ap.add_subparsers(dest="cmd", required=True)

    v = sub.add_parser("validate", help="check a scenario file")
    v.add_argument("scenario", type=Path)
    v.add_argument("--variant", help="check one variant only (default: base and all variants)")

    r = sub.add_parser("run", help="run a scenario and write metrics")
    r.add_argument("scenario", type=Path)
    r.add_argument("-o", "--out", type=Path, required=True, help="output directory")
    r.add_argument("--variant", help="variant to run (default: the base document)")
    r.add_argument("--seed", type=int, help="seed for randomized demand profiles")
    r.add_argument("--emit", type=_emit_list, default=EMIT_CHOICES,
                   help="comma list of " + ",".join(EMIT_CHOICES) + " (default: all)")
    r.add_argument("-q", "--quiet", action="store_true")

    p = sub.add_parser("report", help="compare timelines phase by phase")
    p.add_argument("timelines", type=Path, nargs="+")
    p.add_argument("-o", "--out", type=Path, help="directory for comparison.json and plot_long.csv")
    p.add_argument("--labels", help="comma list of variant labels, one per timeline")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.cmd == "validate":
            return cmd_validate(args.scenario, args.variant)
        if args.cmd == "run":
            return cmd_run(RunConfig(args.scenario, args.out, args.variant, args.seed,
                                     args.emit, args.quiet))
        labels = args.labels.split(",") if args.labels else None
        return cmd_report(args.timelines, args.out, labels)
    except KeyboardInterrupt:
        return EXIT_USER
    except Exception as e:  # noqa: BLE001
        print(f"internal error: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
