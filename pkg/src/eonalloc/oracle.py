"""Brute-force reference solvers for tiny instances.

``rgo_exact`` enumerates every split of every demand (in units of a flow
quantum) over the loop-free relay sequences between its endpoints.
``tpa_exact`` walks the discrete (c, r, b) choices in order of transponder
power and decides continuous feasibility of each with a launch-power /
carrier-frequency grid followed by a local SLSQP polish. Neither touches the
convex program or the barrier solver.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
from scipy.optimize import minimize as scipy_minimize

from . import phy
from .model import NetworkModel, Params, RgoWeights, TrafficRequest, TransponderLimits
from .power import transponder_power
from .rgo import RgoSolution
from .topology import NoRouteError, shared_spans, shortest_path, span_count


class OracleBudgetExceeded(RuntimeError):
    """The instance is too large for exhaustive enumeration; nothing was truncated."""


@dataclass(frozen=True)
class OracleBudget:
    max_nodes: int = 4
    max_transponders: int = 3
    power_points: int = 9          # launch-power grid points per lightpath, log spaced
    power_range_mw: tuple[float, float] = (0.01, 100.0)
    frequency_points: int = 16     # carrier grid points per lightpath over the band
    max_evaluations: int = 10_000_000
    polish_starts: int = 3


# ---------------------------------------------------------------------- RGO
@dataclass(frozen=True)
class RgoExactResult:
    objective: float
    loads: dict[tuple, float]        # (u, w) -> bit/s carried by lightpaths u -> w
    lightpaths: dict[tuple, int]     # (u, w) -> number of lightpaths
    evaluations: int


def _relay_paths(nodes: Sequence, s, d) -> list[tuple]:
    middle = [v for v in nodes if v not in (s, d)]
    out = []
    for k in range(len(middle) + 1):
        for perm in itertools.permutations(middle, k):
            out.append((s, *perm, d))
    return out


def _compositions(units: int, parts: int) -> list[tuple[int, ...]]:
    out = []
    for cuts in itertools.combinations(range(units + parts - 1), parts - 1):
        prev = -1
        sizes = []
        for c in cuts:
            sizes.append(c - prev - 1)
            prev = c
        sizes.append(units + parts - 1 - prev - 1)
        out.append(tuple(sizes))
    return out


def rgo_exact(requests: Sequence[TrafficRequest], net: NetworkModel, limits: TransponderLimits,
              weights: RgoWeights = RgoWeights(), *, quantum: float | None = None,
              budget: OracleBudget = OracleBudget()) -> RgoExactResult:
    """Optimal routing/grooming objective with flows restricted to multiples of ``quantum``.

    Lightpaths u -> w are taken on a shortest u -> w route (any other route
    only adds length), and the cheapest way to carry a relay load l on u -> w
    is ceil(l / C) lightpaths.
    """
    if len(net.nodes) > budget.max_nodes:
        raise OracleBudgetExceeded(f"{len(net.nodes)} nodes exceed the budget of {budget.max_nodes}")
    cap = limits.capacity
    if quantum is None:
        quantum = _common_quantum([q.rate for q in requests] + [cap])
    nodes = list(net.nodes)
    pairs = [(u, w) for u in nodes for w in nodes if u != w]
    col = {p: k for k, p in enumerate(pairs)}
    length = np.full(len(pairs), np.inf)
    for (u, w), k in col.items():
        try:
            length[k] = shortest_path(net, u, w).length_km
        except NoRouteError:
            pass

    options = []
    total = 1
    for q in requests:
        units = q.rate / quantum
        if abs(units - round(units)) > 1e-9 * max(1.0, units):
            raise ValueError(f"request {q.id!r} is not a multiple of the flow quantum")
        units = int(round(units))
        relays = _relay_paths(nodes, q.source, q.destination)
        loads = []
        for split in _compositions(units, len(relays)):
            vec = np.zeros(len(pairs))
            for amount, relay in zip(split, relays):
                if amount:
                    for hop in zip(relay, relay[1:]):
                        vec[col[hop]] += amount * quantum
            loads.append(vec)
        options.append(np.array(loads))
        total *= len(loads)
    if total > budget.max_evaluations:
        raise OracleBudgetExceeded(f"{total} flow assignments exceed the budget of {budget.max_evaluations}")

    per_lightpath = length + weights.hop_penalty + weights.idle_penalty * cap
    tx_of = np.array([[1.0 if p[0] == v else 0.0 for p in pairs] for v in nodes])
    rx_of = np.array([[1.0 if p[1] == v else 0.0 for p in pairs] for v in nodes])
    bank = net.transponders_per_node

    best = (math.inf, None)
    if not requests:
        return RgoExactResult(0.0, {}, {}, 1)
    head, tail = options[:-1], options[-1]
    for combo in itertools.product(*[range(len(o)) for o in head]):
        base = np.zeros(len(pairs))
        for opt, idx in zip(head, combo):
            base = base + opt[idx]
        loads = base[None, :] + tail
        count = np.ceil(loads / cap - 1e-9)
        used = count > 0
        with np.errstate(invalid="ignore"):
            cost = np.where(used, count * per_lightpath, 0.0).sum(axis=1) - weights.idle_penalty * loads.sum(axis=1)
        ok = np.all(count @ tx_of.T <= bank, axis=1) & np.all(count @ rx_of.T <= bank, axis=1)
        cost = np.where(ok, cost, np.inf)
        k = int(np.argmin(cost))
        if cost[k] < best[0] - 1e-9:
            best = (float(cost[k]), loads[k].copy())
    if best[1] is None:
        raise ValueError("no feasible routing within the transponder banks")
    loads = {pairs[k]: float(v) for k, v in enumerate(best[1]) if v > 0}
    counts = {p: int(math.ceil(v / cap - 1e-9)) for p, v in loads.items()}
    return RgoExactResult(best[0], loads, counts, total)


def _common_quantum(values: Sequence[float]) -> float:
    """Largest q with every value an integer multiple of q (values rounded to 1 bit/s)."""
    ints = [int(round(v)) for v in values]
    g = 0
    for v in ints:
        g = math.gcd(g, v)
    return float(g)


# ---------------------------------------------------------------------- TPA
@dataclass
class TpaExactResult:
    feasible: bool
    objective: float
    assignment: dict[str, tuple[float, float, int]] = field(default_factory=dict)   # id -> (c, r, b)
    power_w: dict[str, float] = field(default_factory=dict)
    omega_hz: dict[str, float] = field(default_factory=dict)
    margin: float = -math.inf
    evaluations: int = 0
    combos_checked: int = 0


@dataclass(frozen=True)
class _Instance:
    ids: tuple[str, ...]
    loads: dict[str, float]
    spans: dict[str, int]
    shared: dict[tuple[str, str], int]
    neighbours: tuple[tuple[str, str], ...]


def _instance(rgo: RgoSolution, params: Params) -> _Instance:
    lps = rgo.lightpaths()
    ids = tuple(lp.id for lp in lps)
    by_tx = {lp.tx: lp.id for lp in lps}
    shared = {}
    for a, b in itertools.combinations(lps, 2):
        n = shared_spans(a.path, b.path, params.phys)
        if n:
            shared[(a.id, b.id)] = shared[(b.id, a.id)] = n
    neighbours = set()
    for _l, order in rgo.spectral_order.items():
        for lo, hi in zip(order, order[1:]):
            neighbours.add((by_tx[lo], by_tx[hi]))
    return _Instance(ids, {lp.id: lp.load for lp in lps}, {lp.id: span_count(lp.path, params.phys) for lp in lps},
                     shared, tuple(sorted(neighbours)))


def _margins(inst: _Instance, theta, delta, p, omega, params: Params) -> np.ndarray:
    """log(Psi / Theta) per lightpath; p and omega have shape (points, lightpaths)."""
    k = params.constants
    n_lp = len(inst.ids)
    out = np.empty(p.shape)
    for a, i in enumerate(inst.ids):
        n_i = inst.spans[i]
        noise = k.ase_psd * n_i * delta[a] + k.sci_coefficient * n_i * p[:, a] ** 3
        xci = np.zeros(len(p))
        for b_, j in enumerate(inst.ids):
            s = inst.shared.get((i, j), 0)
            if b_ != a and s:
                d = np.abs(omega[:, a] - omega[:, b_])
                with np.errstate(divide="ignore"):
                    xci = xci + p[:, b_] ** 2 * s / (delta[b_] * d)
        noise = noise + k.xci_weight * k.nli_coefficient * p[:, a] * xci
        with np.errstate(divide="ignore"):
            out[:, a] = np.log(p[:, a] / noise) - math.log(theta[a])
    return out


def _spectrum_ok(inst: _Instance, delta, omega, params: Params, bandwidth: float) -> np.ndarray:
    G = params.phys.guard_band
    idx = {i: a for a, i in enumerate(inst.ids)}
    ok = np.ones(len(omega), dtype=bool)
    for a in range(len(inst.ids)):
        ok &= omega[:, a] - 0.5 * delta[a] >= -1e-6
        ok &= omega[:, a] + 0.5 * delta[a] <= bandwidth + 1e-6
    for lo, hi in inst.neighbours:
        a, b = idx[lo], idx[hi]
        ok &= omega[:, a] + 0.5 * delta[a] + G <= omega[:, b] - 0.5 * delta[b] + 1e-6
    return ok


def _feasibility(inst: _Instance, theta, delta, params: Params, bandwidth: float, budget: OracleBudget,
                 counter: list[int]) -> tuple[float, np.ndarray, np.ndarray]:
    """Best worst-case margin over (p, omega): grid scan then SLSQP polish."""
    n_lp = len(inst.ids)
    lo_mw, hi_mw = budget.power_range_mw
    p_grid = np.logspace(math.log10(lo_mw * 1e-3), math.log10(hi_mw * 1e-3), budget.power_points)
    w_axes = [np.linspace(0.5 * delta[a], bandwidth - 0.5 * delta[a], budget.frequency_points) for a in range(n_lp)]
    W = np.array(list(itertools.product(*w_axes)))
    W = W[_spectrum_ok(inst, delta, W, params, bandwidth)]
    if not len(W):
        return -math.inf, np.zeros(n_lp), np.zeros(n_lp)
    P = np.array(list(itertools.product(p_grid, repeat=n_lp)))
    counter[0] += len(W) * len(P)
    if counter[0] > budget.max_evaluations:
        raise OracleBudgetExceeded(f"grid evaluations exceed the budget of {budget.max_evaluations}")
    cands = []
    chunk = max(1, 200_000 // len(P))
    for start in range(0, len(W), chunk):
        w_part = W[start:start + chunk]
        pp = np.tile(P, (len(w_part), 1))
        ww = np.repeat(w_part, len(P), axis=0)
        worst = _margins(inst, theta, delta, pp, ww, params).min(axis=1)
        top = np.argsort(-worst)[: budget.polish_starts]
        cands.extend((float(worst[t]), pp[t], ww[t]) for t in top)
    cands.sort(key=lambda c: -c[0])
    best = cands[0]

    G = params.phys.guard_band
    idx = {i: a for a, i in enumerate(inst.ids)}
    scale = bandwidth

    def unpack(z):
        return np.exp(z[:n_lp])[None, :], (z[n_lp:2 * n_lp] * scale)[None, :]

    def neg_level(z):
        return -z[-1]

    cons = [{"type": "ineq", "fun": lambda z, a=a: _margins(inst, theta, delta, *unpack(z), params)[0, a] - z[-1]}
            for a in range(n_lp)]
    for a in range(n_lp):
        cons.append({"type": "ineq", "fun": lambda z, a=a: (z[n_lp + a] * scale - 0.5 * delta[a]) / scale})
        cons.append({"type": "ineq", "fun": lambda z, a=a: (bandwidth - 0.5 * delta[a] - z[n_lp + a] * scale) / scale})
    for lo, hi in inst.neighbours:
        a, b = idx[lo], idx[hi]
        cons.append({"type": "ineq", "fun": lambda z, a=a, b=b:
                     (z[n_lp + b] * scale - 0.5 * delta[b] - z[n_lp + a] * scale - 0.5 * delta[a] - G) / scale})
    for level, p0, w0 in cands[: budget.polish_starts]:
        z0 = np.concatenate([np.log(p0), w0 / scale, [level]])
        res = scipy_minimize(neg_level, z0, method="SLSQP", constraints=cons,
                             options={"maxiter": 200, "ftol": 1e-12})
        counter[0] += int(res.get("nfev", 0))
        p_new, w_new = unpack(res.x)
        if not np.all(np.isfinite(res.x)) or not _spectrum_ok(inst, delta, w_new, params, bandwidth)[0]:
            continue
        level_new = float(_margins(inst, theta, delta, p_new, w_new, params).min())
        if level_new > best[0]:
            best = (level_new, p_new[0], w_new[0])
    return best


def tpa_exact(rgo: RgoSolution, params: Params, fiber_bandwidth: float, *,
              budget: OracleBudget = OracleBudget(), fixed_power: Mapping[str, float] | None = None,
              tolerance: float = 1e-9) -> TpaExactResult:
    """Cheapest table-valued (c, r, integer b) per lightpath with a feasible (p, omega) on the grid+polish.

    The total transponder power depends only on (r, b); for fixed (r, b) the
    smallest level c that carries the load has the lowest threshold, so only
    that c is tried. Triples whose single-channel OSNR ceiling is already
    below the threshold are discarded before any grid search.
    """
    inst = _instance(rgo, params)
    n_lp = len(inst.ids)
    if n_lp > budget.max_transponders:
        raise OracleBudgetExceeded(f"{n_lp} lightpaths exceed the budget of {budget.max_transponders}")
    if n_lp == 0:
        return TpaExactResult(True, 0.0)
    k = params.constants
    F = params.phys.subcarrier_spacing
    lim = params.limits
    bmax = int(math.floor(lim.max_subcarrier_exponent + 1e-9))
    per_lp = []
    for i in inst.ids:
        opts = []
        for b in range(1, bmax + 1):
            for r in lim.coding_rates:
                c = next((float(c) for c in lim.modulation_levels
                          if 2.0 * r * c * 2.0 ** b * F >= inst.loads[i] * (1 - 1e-12)), None)
                if c is None:
                    continue
                theta = phy.theta_lookup(c, r)
                if phy.max_single_osnr(k, 2.0 ** b * F, inst.spans[i]) < theta:
                    continue
                opts.append((transponder_power(b, r, params.power), c, r, b))
        if not opts:
            return TpaExactResult(False, math.inf)
        per_lp.append(sorted(opts))
    combos = sorted(itertools.product(*per_lp), key=lambda combo: (math.fsum(o[0] for o in combo), combo))
    counter = [0]
    checked = 0
    for combo in combos:
        checked += 1
        theta = np.array([phy.theta_lookup(o[1], o[2]) for o in combo])
        delta = np.array([2.0 ** o[3] * F for o in combo])
        if fixed_power is not None:
            fixed_budget = OracleBudget(budget.max_nodes, budget.max_transponders, 1, budget.power_range_mw,
                                        budget.frequency_points, budget.max_evaluations, budget.polish_starts)
            level, p, w = _fixed_power_feasibility(inst, theta, delta, params, fiber_bandwidth, fixed_budget,
                                                   counter, fixed_power)
        else:
            level, p, w = _feasibility(inst, theta, delta, params, fiber_bandwidth, budget, counter)
        if level >= -tolerance:
            return TpaExactResult(True, math.fsum(o[0] for o in combo),
                                  {i: (o[1], o[2], o[3]) for i, o in zip(inst.ids, combo)},
                                  dict(zip(inst.ids, map(float, p))), dict(zip(inst.ids, map(float, w))),
                                  level, counter[0], checked)
    return TpaExactResult(False, math.inf, evaluations=counter[0], combos_checked=checked)


def _fixed_power_feasibility(inst, theta, delta, params, bandwidth, budget, counter, fixed_power):
    n_lp = len(inst.ids)
    p = np.array([fixed_power[i] for i in inst.ids])
    w_axes = [np.linspace(0.5 * delta[a], bandwidth - 0.5 * delta[a], budget.frequency_points) for a in range(n_lp)]
    W = np.array(list(itertools.product(*w_axes)))
    W = W[_spectrum_ok(inst, delta, W, params, bandwidth)]
    counter[0] += len(W)
    if not len(W):
        return -math.inf, p, np.zeros(n_lp)
    worst = _margins(inst, theta, delta, np.tile(p, (len(W), 1)), W, params).min(axis=1)
    t = int(np.argmax(worst))
    return float(worst[t]), p, W[t]


# ------------------------------------------------------ random instances
@dataclass(frozen=True)
class TinyInstance:
    net: NetworkModel
    requests: tuple[TrafficRequest, ...]
    params: Params


def random_tiny_instance(rng: np.random.Generator, *, n_nodes: int = 3, max_requests: int = 3,
                         capacity: float = 100e9, quantum_share: int = 4) -> TinyInstance:
    """Line or ring on ``n_nodes`` nodes with up to ``max_requests`` demands.

    Demands are multiples of ``capacity / quantum_share`` (at most 1.25 C)
    so the exhaustive routing search stays inside its budget.
    """
    from .model import bidirectional, reference_phys, reference_power

    nodes = list(range(1, n_nodes + 1))
    spans = [(u, u + 1, float(rng.choice([300, 800, 1500, 3000, 4500]))) for u in nodes[:-1]]
    if n_nodes > 3 and rng.random() < 0.5:
        spans.append((nodes[-1], nodes[0], float(rng.choice([500, 1500, 3000]))))
    net = bidirectional(nodes, spans, transponders_per_node=int(rng.integers(2, 5)), fiber_bandwidth=2e12)
    quantum = capacity / quantum_share
    reqs = []
    for k in range(int(rng.integers(1, max_requests + 1))):
        s, d = rng.choice(nodes, size=2, replace=False)
        units = int(rng.integers(1, quantum_share + 2))
        reqs.append(TrafficRequest(f"q{k}", int(s), int(d), units * quantum))
    spacing = float(rng.choice([0.25, 1.0, 5.0, 12.5]))
    params = Params(reference_phys(spacing), reference_power(), TransponderLimits(capacity))
    return TinyInstance(net, tuple(reqs), params)


COMPARISON_COLUMNS = ("instance", "lightpaths", "pipeline_w", "oracle_w", "rel_gap", "validation_passed",
                      "oracle_feasible", "rgo_heuristic", "rgo_exact", "rgo_check_passed", "pipeline_s", "oracle_s")


def compare_instance(inst: TinyInstance, index: int = 0, *, budget: OracleBudget = OracleBudget(),
                     weights: RgoWeights = RgoWeights()) -> dict:
    """One row of pipeline-vs-oracle numbers for both stages."""
    import time

    from .rgo import ilp_check, ilp_objective, run_rgo
    from .tpa import run_tpa

    lim = inst.params.limits
    rgo = run_rgo(list(inst.requests), inst.net, lim)
    row = {"instance": index, "lightpaths": rgo.active_transponders,
           "rgo_heuristic": ilp_objective(rgo, inst.net, lim, weights),
           "rgo_check_passed": ilp_check(rgo, list(inst.requests), inst.net, lim, weights).feasible}
    row["rgo_exact"] = rgo_exact(list(inst.requests), inst.net, lim, weights, budget=budget).objective
    if rgo.active_transponders <= budget.max_transponders:
        t0 = time.perf_counter()
        res = run_tpa(rgo, inst.params, inst.net.fiber_bandwidth)
        t1 = time.perf_counter()
        ex = tpa_exact(rgo, inst.params, inst.net.fiber_bandwidth, budget=budget)
        t2 = time.perf_counter()
        row.update(pipeline_w=res.transponder_power, oracle_w=ex.objective, validation_passed=res.validation.passed,
                   oracle_feasible=ex.feasible, pipeline_s=t1 - t0, oracle_s=t2 - t1,
                   rel_gap=(res.transponder_power / ex.objective - 1.0) if ex.feasible else None)
    return {k: row.get(k) for k in COMPARISON_COLUMNS}
