"""Command line entry point: ``eonalloc {run,sweep,validate,oracle-compare}``."""
from __future__ import annotations

import argparse
import csv
import io
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .rgo import ilp_check
from .scenario import ScenarioError, load_scenario, run_scenario, solution_from_json, SWEEP_AXES
from .tpa import validate_assignment

log = logging.getLogger("eonalloc")

EXIT_OK, EXIT_INFEASIBLE, EXIT_USAGE = 0, 1, 2


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("-c", "--config", required=True, help="scenario YAML")
    p.add_argument("-o", "--out", help="output directory (overrides scenario.output_dir)")
    p.add_argument("--seed", type=int, help="random seed for traffic jitter")
    p.add_argument("--workers", type=int, help="parallel sweep points")
    p.add_argument("--kkt-tol", type=float, help="barrier KKT residual tolerance")
    p.add_argument("--newton-tol", type=float, help="Newton decrement tolerance")
    p.add_argument("--trace", action="store_true", help="write per-iteration solver trace CSV")
    p.add_argument("--no-grooming", action="store_true", help="route every remainder on its own lightpath")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="eonalloc", description="Two-stage energy-aware EON planner")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    run_p = sub.add_parser("run", help="single point, ignoring any sweep in the config")
    _common(run_p)

    sweep_p = sub.add_parser("sweep", help="run the configured sweep")
    _common(sweep_p)
    sweep_p.add_argument("--axis", choices=SWEEP_AXES[1:], help="override the sweep axis")
    sweep_p.add_argument("--values", type=float, nargs="+", help="override the sweep values")

    val_p = sub.add_parser("validate", help="re-check a solution JSON against a config")
    val_p.add_argument("-c", "--config", required=True)
    val_p.add_argument("solution", help="*_solution.json written by run/sweep")
    val_p.add_argument("--tolerance", type=float, default=1e-6)

    ora_p = sub.add_parser("oracle-compare", help="pipeline vs brute force on random tiny instances")
    ora_p.add_argument("--instances", type=int, default=20)
    ora_p.add_argument("--nodes", type=int, choices=(3, 4), default=3)
    ora_p.add_argument("--seed", type=int, default=0)
    ora_p.add_argument("-o", "--out", default="oracle_compare.csv")
    return parser


def _overrides(args) -> dict:
    out = {"output_dir": args.out, "seed": args.seed, "workers": args.workers}
    if args.trace:
        out["trace"] = True
    if args.no_grooming:
        out["grooming"] = False
    return out


def _with_solver(sc, args):
    changes = {k: v for k, v in (("kkt_tol", args.kkt_tol), ("newton_tol", args.newton_tol)) if v is not None}
    return replace(sc, solver=replace(sc.solver, **changes)) if changes else sc


def cmd_run(args, sweep: bool) -> int:
    overrides = _overrides(args)
    if not sweep:
        overrides.update(sweep_axis="none", sweep_values=())
    elif args.axis or args.values:
        if args.axis:
            overrides["sweep_axis"] = args.axis
        if args.values:
            overrides["sweep_values"] = tuple(int(v) if args.axis == "modulation-set-size" else v
                                              for v in args.values)
    sc = _with_solver(load_scenario(args.config, **overrides), args)
    if sweep and sc.sweep_axis == "none":
        log.error("the config has no sweep axis; use `run` or pass --axis/--values")
        return EXIT_USAGE
    try:
        rows = run_scenario(sc)
    except ScenarioError as exc:
        log.error("%s", exc)
        return EXIT_INFEASIBLE
    for row in rows:
        print(f"[{row.sweep_index}] {row.sweep_axis}={row.sweep_value or '-'} total={row.total_power_w:.3f} W "
              f"transponders={row.active_transponders} TUR={row.tur:.3f} "
              f"TGR={'n/a' if row.tgr is None else f'{row.tgr:.3f}'}")
    print(f"wrote {Path(sc.output_dir) / (sc.name + '_metrics.csv')}")
    return EXIT_OK


def cmd_validate(args) -> int:
    sc = load_scenario(args.config)
    requests, limits, rgo, cfgs = solution_from_json(Path(args.solution).read_text(), sc.net)
    params = replace(sc.params, limits=limits)
    report = validate_assignment(cfgs, rgo, params, sc.net.fiber_bandwidth, args.tolerance)
    ilp = ilp_check(rgo, requests, sc.net, limits, sc.weights)
    for r in report.failures:
        print(f"FAIL {r.family} {r.element} slack={r.slack:.3e}")
    for v in ilp.violations:
        print(f"FAIL ilp {v}")
    ok = report.passed and ilp.feasible
    print(f"{'PASS' if ok else 'FAIL'}: {len(report.residuals)} residuals (worst {report.worst:.3e}), "
          f"{len(ilp.violations)} ILP violations")
    return EXIT_OK if ok else EXIT_INFEASIBLE


def cmd_oracle(args) -> int:
    from .oracle import COMPARISON_COLUMNS, compare_instance, random_tiny_instance
    from .rgo import CapacityExceededError

    rng = np.random.default_rng(args.seed)
    rows = []
    skipped = 0
    while len(rows) < args.instances:
        try:
            rows.append(compare_instance(random_tiny_instance(rng, n_nodes=args.nodes), len(rows)))
        except CapacityExceededError:
            skipped += 1  # the drawn banks cannot hold the demand; draw again
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=COMPARISON_COLUMNS, lineterminator="\n")
    writer.writeheader()
    writer.writerows([{k: ("" if v is None else v) for k, v in row.items()} for row in rows])
    Path(args.out).write_text(buf.getvalue())
    gaps = [r["rel_gap"] for r in rows if r["rel_gap"] is not None]
    bad = [r for r in rows if r["validation_passed"] is False or not r["rgo_check_passed"]
           or r["rgo_heuristic"] < r["rgo_exact"] - 1e-6]
    print(f"{len(rows)} instances, {len(gaps)} with stage-2 comparison, "
          f"max |gap| {max(map(abs, gaps), default=0.0):.2e}, {len(bad)} failures, {skipped} over-full draws "
          f"skipped -> {args.out}")
    return EXIT_OK if not bad else EXIT_INFEASIBLE


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "run":
            return cmd_run(args, sweep=False)
        if args.command == "sweep":
            return cmd_run(args, sweep=True)
        if args.command == "validate":
            return cmd_validate(args)
        return cmd_oracle(args)
    except (OSError, ValueError, KeyError) as exc:
        log.error("%s: %s", type(exc).__name__, exc)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
