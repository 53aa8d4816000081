"""Compiled vs numpy log-sum-exp kernels on TPA programs of growing size.

    python3 benchmarks/bench_kernels.py [--sizes 0.2 0.8 3.2] [--repeat 20]

Prints one row per (aggregate traffic, backend): lightpaths, constraints,
terms, mean kernel call time, and wall time of a full relaxed solve.
"""
from __future__ import annotations

import argparse
import statistics
import time
from pathlib import Path

import numpy as np

from eonalloc.rgo import run_rgo
from eonalloc.scenario import load_scenario
from eonalloc.solver import kernels
from eonalloc.tpa import build_program, solve_relaxed

CONFIG = Path(__file__).resolve().parent.parent / "configs" / "desk_grooming.yaml"


def time_kernel(cons, x, backend, repeat: int) -> float:
    samples = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        kernels.lse_barrier(cons, x, backend=backend)
        samples.append(time.perf_counter() - t0)
    return statistics.median(samples)


def main(argv=None) -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--sizes", type=float, nargs="+", default=[0.2, 0.8, 3.2, 6.4], help="aggregate traffic, Tb/s")
    ap.add_argument("--repeat", type=int, default=20)
    ap.add_argument("--no-solve", action="store_true", help="skip the full relaxed solves")
    args = ap.parse_args(argv)

    sc = load_scenario(CONFIG)
    backends = kernels.available_backends()
    if "compiled" not in backends:
        print("compiled extension not built; only the numpy fallback is timed")
    print(f"{'Tb/s':>6} {'backend':>9} {'lps':>4} {'m':>5} {'terms':>6} {'kernel ms':>10} {'solve s':>8} {'speedup':>8}")
    for tbps in args.sizes:
        requests = sc.traffic.requests(tbps * 1e12)
        rgo = run_rgo(requests, sc.net, sc.params.limits)
        prog = build_program(rgo, sc.params, sc.net.fiber_bandwidth)
        cons = prog.problem.all_constraints
        x = prog.heuristic_start()
        base = None
        for name in ("python", "compiled"):
            if name not in backends:
                continue
            kt = time_kernel(cons, x, backends[name], args.repeat)
            st = float("nan")
            if not args.no_solve:
                with kernels.use_backend(name):
                    t0 = time.perf_counter()
                    solve_relaxed(prog, sc.solver)
                    st = time.perf_counter() - t0
            base = kt if base is None else base
            print(f"{tbps:6.1f} {name:>9} {len(rgo.routes):4d} {cons.m:5d} {cons.A.shape[0]:6d} "
                  f"{kt * 1e3:10.3f} {st:8.2f} {base / kt:7.1f}x")
        # both kernels must agree on the same point
        if len(backends) == 2:
            a = kernels.lse_barrier(cons, x, backend=backends["python"])
            b = kernels.lse_barrier(cons, x, backend=backends["compiled"])
            assert np.allclose(a[1], b[1], rtol=1e-10) and np.allclose(a[3], b[3], rtol=1e-9, atol=1e-12)


if __name__ == "__main__":
    main()
