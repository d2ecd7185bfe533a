"""Command-line front end: optimize, simulate, sweep, verify, gen."""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import math
import os
import sys
import time
from importlib import resources
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from . import __version__
from .dual import StepSchedule, solve_forwarder_edge, solve_server_edge
from .network import (
    NodeRole,
    Scenario,
    ScenarioError,
    default_catalog,
    ResolutionCatalog,
    save_scenario,
    scenario_from_dict,
    validate,
)
from .oracle import LimitsExceeded, OracleError, OracleLimits, ilp_optimum, knapsack_grid_check
from .pipeline import optimize
from .reconstruct import residual_violations
from .topology import random_tree, reference_tree

log = logging.getLogger("comets")

EXIT_OK, EXIT_FAIL, EXIT_INPUT = 0, 1, 2


class InputError(Exception):
    """Bad user input; reported on stderr with exit code 2."""


def _setup_logging() -> None:
    level = os.environ.get("COMETS_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)


def _write(out: Path, name: str, text: str) -> Path:
    path = out / name
    path.write_text(text, encoding="utf-8")
    return path


def _dump(obj: Any) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def _load(path: str | None) -> Scenario:
    if path is None:
        raise InputError("--scenario is required")
    p = Path(path)
    if not p.is_file():
        raise InputError(f"scenario file not found: {p}")
    try:
        doc = json.loads(p.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise InputError(f"{p}: not valid JSON ({exc})") from exc
    if isinstance(doc, dict) and "scenario" in doc and "expected" in doc:
        doc = doc["scenario"]
    try:
        sc = scenario_from_dict(doc)
    except (ScenarioError, TypeError, KeyError, ValueError) as exc:
        raise InputError(f"{p}: {exc}") from exc
    problems = validate(sc)
    if problems:
        raise InputError(f"{p}: invalid scenario: " + "; ".join(map(str, problems)))
    return sc


def _apply_overrides(sc: Scenario, a: argparse.Namespace) -> Scenario:
    changes = {}
    for key, attr in (("seed", "seed"), ("loss", "loss_rate"), ("eps", "eps"), ("tmax", "tmax"),
                      ("alpha0", "alpha0"), ("beta0", "beta0"), ("mode", "mode")):
        v = getattr(a, key, None)
        if v is not None:
            changes[attr] = v
    return sc.with_sim(**changes) if changes else sc


def _finite_or_inf(text: str) -> float:
    v = float(text)
    if math.isnan(v) or v < 0:
        raise argparse.ArgumentTypeError(f"expected a non-negative number, got {text!r}")
    return v


def _positive(text: str) -> float:
    v = float(text)
    if not v > 0 or math.isinf(v):
        raise argparse.ArgumentTypeError(f"expected a positive number, got {text!r}")
    return v


def _loss(text: str) -> float:
    v = float(text)
    if not 0 <= v < 1:
        raise argparse.ArgumentTypeError("loss rate must lie in [0, 1)")
    return v


def _counts(text: str) -> list[int]:
    text = text.strip()
    if not text:
        return []
    try:
        vals = [int(t) for t in text.split(",")]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"bad --counts {text!r}") from exc
    if any(v < 1 for v in vals):
        raise argparse.ArgumentTypeError("client counts must be positive")
    return vals


# ---------------------------------------------------------------------------
# optimize


def cmd_optimize(a: argparse.Namespace) -> int:
    sc = _apply_overrides(_load(a.scenario), a)
    out = Path(a.out)
    out.mkdir(parents=True, exist_ok=True)
    sp = sc.sim
    res = optimize(sc, StepSchedule(sp.alpha0, sp.beta0), tmax=sp.tmax, eps=sp.eps, mode=sp.mode)
    tr = res.trace

    z_star = None
    oracle_note = None
    try:
        sol = ilp_optimum(sc)
        z_star = None if sol is None else sol.z
        oracle_note = "infeasible" if sol is None else "ok"
    except LimitsExceeded:
        oracle_note = "skipped: limits"
    except OracleError as exc:
        oracle_note = f"skipped: {exc}"

    g_final = tr.g[-1]
    gap = {
        "g_final": g_final,
        "g_best": res.g_best,
        "z_tilde": res.z_tilde,
        "gap": (g_final - res.z_tilde) / g_final if g_final > 0 else 0.0,
        "gap_best_bound": res.gap,
        "z_star": z_star,
        "oracle": oracle_note,
        "iterations": len(tr),
        "converged": tr.converged,
        "uniqueness": None if tr.uniqueness is None else {
            "unique": tr.uniqueness.unique, "user_ties": tr.uniqueness.user_ties,
            "forwarder_zero": tr.uniqueness.forwarder_zero, "knapsack_ties": tr.uniqueness.knapsack_ties},
    }
    if z_star is not None:
        gap["sandwich_ok"] = bool(res.z_tilde <= z_star + 1e-6 and z_star <= res.g_best + 1e-6)
    g = sc.graph
    solution = {
        "levels": {u: lv for u, lv in res.levels(sc).items()},
        "resolutions": {u: (sc.catalog.names[lv - 1] if lv else None) for u, lv in res.levels(sc).items()},
        "unserved": res.best.unserved_users,
        "objective": res.z_tilde,
        "best_iteration": res.best_iteration,
        "transmissions": {f"{e.src}>{e.dst}": [int(v) for v in res.best.y[k]] for k, e in enumerate(g.edges)},
        "violations": residual_violations(sc, res.best),
    }
    _write(out, "trace.csv", tr.to_csv(wall=a.timing))
    _write(out, "solution.json", _dump(solution))
    _write(out, "gap.json", _dump(gap))
    if not a.no_plots:
        from .plotting import plot_convergence
        plot_convergence(tr.g, tr.best_g, res.z_history, z_star, out / "convergence.png")
    print(f"Z~={res.z_tilde:.6f} g={g_final:.6f} gap={gap['gap']:.4%} iterations={len(tr)}")
    if z_star is not None and not gap["sandwich_ok"]:
        log.error("weak-duality sandwich violated")
        return EXIT_FAIL
    return EXIT_OK


# ---------------------------------------------------------------------------
# simulate


def cmd_simulate(a: argparse.Namespace) -> int:
    from .sim import run_simulation

    sc = _apply_overrides(_load(a.scenario), a)
    out = Path(a.out)
    out.mkdir(parents=True, exist_ok=True)
    res = run_simulation(sc, duration=a.duration)
    _write(out, "events.csv", res.events_csv())
    _write(out, "metrics.json", res.report.to_json() + "\n")
    _write(out, "traces.csv", res.traces_csv())
    if not a.no_plots:
        from .plotting import plot_simulation
        plot_simulation(res.traces, out / "simulation.png")
    r = res.report
    print(f"clients={len(r.clients)} qoe={r.composite_qoe:.4f} jain={r.jain:.4f} "
          f"mean_interarrival_ms={r.mean_interarrival_ms:.1f}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# sweep

SWEEP_COLUMNS = ["users", "qoe", "fairness", "jitter_ms", "startup_s", "buffer_s", "mean_interarrival_ms",
                 "optimizer_ms", "optimizer_iterations", "per_iteration_ms", "error"]


def sweep_row(base: Scenario | None, n: int, seed: int, loss: float | None, mode: str | None,
              duration: float | None) -> dict:
    from .sim import run_simulation

    row: dict[str, Any] = {"users": n, "error": ""}
    try:
        cat = base.catalog if base is not None else None
        sim = base.sim if base is not None else None
        sc = reference_tree(n, catalog=cat, seed=seed, sim=sim)
        sc = sc.with_sim(seed=seed)
        sp = sc.sim
        t0 = time.perf_counter()
        opt = optimize(sc, StepSchedule(sp.alpha0, sp.beta0), tmax=sp.tmax, eps=sp.eps,
                       mode=mode or sp.mode)
        row["optimizer_ms"] = (time.perf_counter() - t0) * 1e3
        row["optimizer_iterations"] = len(opt.trace)
        row["per_iteration_ms"] = float(np.mean(opt.trace.wall_ms))
        rep = run_simulation(sc, duration=duration, loss_rate=loss, mode=mode).report
        row.update(qoe=rep.composite_qoe, fairness=rep.jain,
                   jitter_ms=float(np.mean([c.jitter_ms for c in rep.clients])),
                   startup_s=float(np.mean([c.startup_s for c in rep.clients])),
                   buffer_s=float(np.mean([c.mean_buffer_s for c in rep.clients])),
                   mean_interarrival_ms=rep.mean_interarrival_ms)
    except Exception as exc:  # recorded per row; the sweep carries on
        log.exception("sweep entry with %d users failed", n)
        row["error"] = f"{type(exc).__name__}: {exc}"
    return row


def cmd_sweep(a: argparse.Namespace) -> int:
    base = _load(a.scenario) if a.scenario else None
    if base is not None:
        base = _apply_overrides(base, a)
    out = Path(a.out)
    out.mkdir(parents=True, exist_ok=True)
    seed = a.seed if a.seed is not None else (base.sim.seed if base else 0)
    rows = [sweep_row(base, n, seed, a.loss, a.mode, a.duration) for n in a.counts]
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=SWEEP_COLUMNS, lineterminator="\n", extrasaction="ignore")
    w.writeheader()
    for r in rows:
        w.writerow({k: (f"{v:.6f}" if isinstance(v, float) else v) for k, v in r.items()})
    _write(out, "sweep.csv", buf.getvalue())
    if not a.no_plots and rows:
        from .plotting import plot_sweep
        plot_sweep(rows, out / "sweep.png")
    failed = [r["users"] for r in rows if r["error"]]
    if failed:
        log.error("sweep entries failed for counts %s", failed)
        return EXIT_FAIL
    return EXIT_OK


# ---------------------------------------------------------------------------
# verify


def golden_paths() -> list[Path]:
    root = resources.files("comets") / "golden"
    return sorted(Path(str(p)) for p in root.iterdir() if p.name.endswith(".json"))


def _knapsack_check(sc: Scenario, state, limits: OracleLimits) -> bool:
    g, cat = sc.graph, sc.catalog
    B = cat.bandwidths
    for k, e in enumerate(g.edges):
        dst = g.index[e.dst]
        if g.roles[e.src] is NodeRole.SERVER:
            vals = state.lam1[dst]
            y = solve_server_edge(vals, B, e.capacity)
        else:
            vals = state.lam1[dst] - state.lam2[k]
            y = solve_forwarder_edge(state.lam1[dst], state.lam2[k], B, e.capacity)
        closed = float(np.dot(np.maximum(vals, 0), y))
        try:
            grid = knapsack_grid_check(np.maximum(vals, 0), B, e.capacity, 1e-3, limits)
        except LimitsExceeded:
            continue
        scale = max(1.0, float(np.max(np.abs(vals))))
        if closed < grid - 1e-9 or closed > grid + cat.L * 1e-3 * scale + 1e-9:
            return False
    return True


def verify_document(doc: dict, limits: OracleLimits | None = None) -> dict:
    """Run every check on one scenario document (golden files carry ``expected``)."""
    limits = limits or OracleLimits()
    checks: dict[str, str] = {}
    expected = doc.get("expected") if "scenario" in doc else None
    try:
        sc = scenario_from_dict(doc["scenario"] if "scenario" in doc else doc)
        problems = validate(sc)
        if problems:
            raise ScenarioError("; ".join(map(str, problems)))
        checks["scenario_valid"] = "pass"
    except (ScenarioError, KeyError, TypeError, ValueError) as exc:
        checks["scenario_valid"] = f"fail: {exc}"
        return checks
    try:
        sol = ilp_optimum(sc, limits)
    except LimitsExceeded:
        return {"scenario_valid": "pass", "oracle": "skipped: limits"}
    if sol is None:
        checks["oracle"] = "fail: integer program infeasible"
        return checks
    checks["oracle"] = "pass"
    if expected is not None:
        ok = abs(sol.z - float(expected["z_star"])) <= 1e-9
        checks["golden_optimum"] = "pass" if ok else f"fail: oracle {sol.z!r} != golden {expected['z_star']!r}"
    sp = sc.sim
    try:
        res = optimize(sc, StepSchedule(sp.alpha0, sp.beta0), tmax=sp.tmax, eps=sp.eps,
                       mode=sp.mode, keep_iterates=False)
        checks["decomposition"] = "pass"
    except Exception as exc:  # a mismatch surfaces as an exception from the dual loop
        checks["decomposition"] = f"fail: {exc}"
        return checks
    tr = res.trace
    low = min(tr.g) - sol.z
    checks["weak_duality"] = "pass" if low >= -1e-6 else f"fail: g below optimum by {-low:.3g}"
    high = max(res.z_history) - sol.z
    checks["primal_bound"] = "pass" if high <= 1e-6 else f"fail: reconstruction above optimum by {high:.3g}"
    bad = residual_violations(sc, res.best)
    checks["reconstruction_feasible"] = "pass" if not bad else f"fail: {bad}"
    bg = tr.best_g
    checks["monotone_bound"] = "pass" if all(b <= a for a, b in zip(bg, bg[1:])) else "fail"
    checks["knapsack_optimality"] = "pass" if _knapsack_check(sc, tr.final, limits) else "fail"
    return checks


def cmd_verify(a: argparse.Namespace) -> int:
    out = Path(a.out)
    out.mkdir(parents=True, exist_ok=True)
    if a.scenario:
        p = Path(a.scenario)
        if not p.is_file():
            raise InputError(f"scenario file not found: {p}")
        paths = [p]
    else:
        paths = golden_paths()
    verdict: dict[str, Any] = {"scenarios": {}}
    all_ok = True
    for p in paths:
        try:
            doc = json.loads(p.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            checks = {"scenario_valid": f"fail: not valid JSON ({exc})"}
        else:
            checks = verify_document(doc)
        ok = all(v == "pass" or v.startswith("skipped") for v in checks.values())
        all_ok &= ok
        verdict["scenarios"][p.name] = {"checks": checks, "verdict": "pass" if ok else "fail"}
    verdict["verdict"] = "pass" if all_ok else "fail"
    _write(out, "verdict.json", _dump(verdict))
    for name, v in verdict["scenarios"].items():
        failed = [k for k, c in v["checks"].items() if c.startswith("fail")]
        print(f"{name}: {v['verdict']}" + (f" ({', '.join(failed)})" if failed else ""))
    return EXIT_OK if all_ok else EXIT_FAIL


# ---------------------------------------------------------------------------
# gen


def cmd_gen(a: argparse.Namespace) -> int:
    cat = default_catalog()
    if a.levels is not None:
        if not 1 <= a.levels <= cat.L:
            raise InputError(f"--levels must lie in [1, {cat.L}]")
        cat = ResolutionCatalog(cat.levels[:a.levels])
    seed = a.seed if a.seed is not None else 0
    if a.kind == "reference":
        sc = reference_tree(a.users, aggregation=a.aggregation, edge_per_aggregation=a.fanout,
                            backbone=a.backbone, access=a.access, catalog=cat, seed=seed)
    else:
        cap = None if a.capacity is None else tuple(a.capacity)
        sc = random_tree(seed, a.forwarders, a.users, catalog=cat, capacity_range=cap)
    sc = sc.with_sim(seed=seed)
    out = Path(a.out)
    if out.suffix != ".json":
        out.mkdir(parents=True, exist_ok=True)
        out = out / "scenario.json"
    else:
        out.parent.mkdir(parents=True, exist_ok=True)
    save_scenario(sc, out)
    print(out)
    return EXIT_OK


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="comets", description=__doc__)
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p: argparse.ArgumentParser) -> None:
        p.add_argument("--scenario", help="scenario JSON file")
        p.add_argument("--seed", type=int)
        p.add_argument("--loss", type=_loss)
        p.add_argument("--eps", type=_finite_or_inf)
        p.add_argument("--tmax", type=int)
        p.add_argument("--alpha0", type=_positive)
        p.add_argument("--beta0", type=_positive)
        p.add_argument("--mode", choices=["centralized", "distributed"])
        p.add_argument("--out", default="out")
        p.add_argument("--no-plots", action="store_true", help="skip PNG figures")

    p = sub.add_parser("optimize", help="dual iterations + reconstruction")
    common(p)
    p.add_argument("--timing", action="store_true", help="fill the wall_ms column of trace.csv")
    p.set_defaults(func=cmd_optimize)

    p = sub.add_parser("simulate", help="packet-level protocol simulation")
    common(p)
    p.add_argument("--duration", type=_positive)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("sweep", help="optimize + simulate across client counts")
    common(p)
    p.add_argument("--counts", type=_counts, default=[10, 50, 100])
    p.add_argument("--duration", type=_positive)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("verify", help="oracle cross-checks (shipped golden scenarios by default)")
    common(p)
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("gen", help="write a seeded random scenario")
    p.add_argument("--kind", choices=["random", "reference"], default="random")
    p.add_argument("--seed", type=int)
    p.add_argument("--users", type=int, default=8)
    p.add_argument("--forwarders", type=int, default=3)
    p.add_argument("--levels", type=int)
    p.add_argument("--capacity", type=float, nargs=2, metavar=("LO", "HI"))
    p.add_argument("--aggregation", type=int, default=2)
    p.add_argument("--fanout", type=int, default=4, help="edge forwarders per aggregation node")
    p.add_argument("--backbone", type=_positive, default=400.0)
    p.add_argument("--access", type=_positive, default=100.0)
    p.add_argument("--out", default="scenario.json")
    p.set_defaults(func=cmd_gen)
    return ap


def main(argv: Sequence[str] | None = None) -> int:
    _setup_logging()
    ap = build_parser()
    args = ap.parse_args(argv)
    if getattr(args, "tmax", None) is not None and args.tmax < 1:
        ap.error("--tmax must be >= 1")
    try:
        return args.func(args)
    except InputError as exc:
        print(f"comets: error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
