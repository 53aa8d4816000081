"""Stage 2: transponder parameter assignment.

The per-lightpath parameters (modulation level c, subcarrier exponent b,
coding rate r, launch power p, carrier frequency w) are chosen by solving the
geometric program in log variables (b stays linear), rounding c and r to
their table values in growing neighbourhoods, and finally fixing b to an
integer.
"""
from __future__ import annotations

import csv
import io
import json
import logging
import math
import time
from dataclasses import dataclass, field, replace
from itertools import combinations
from typing import Hashable, Mapping, Sequence

import numpy as np

from . import phy
from .model import (
    TABLE_CODING_RATES,
    TABLE_MODULATION_LEVELS,
    DerivedConstants,
    ParameterDomainError,
    Params,
    TransponderLimits,
)
from .power import transponder_power
from .rgo import Lightpath, OrderingMissingError, RgoSolution
from .solver import (
    InfeasibleProblemError,
    LseConstraints,
    NonConvergenceError,
    SmoothProblem,
    SolveResult,
    SolverParams,
    minimize,
    phase1_feasible_point,
)
from .topology import shared_spans, span_count

log = logging.getLogger(__name__)

LN2 = math.log(2.0)
# smallest integer subcarrier exponent; the relaxation uses it as the lower bound on b
MIN_EXPONENT = 1.0
KINDS = ("c", "r", "p", "w", "t", "b")
_LOG_KINDS = frozenset("crpwt")
_EXACT = 1e-9


class RoundingFailure(RuntimeError):
    def __init__(self, message: str, diagnostics: Mapping | None = None):
        super().__init__(message)
        self.diagnostics = dict(diagnostics or {})


class TpaInfeasibleError(RuntimeError):
    def __init__(self, message: str, lightpaths: Sequence[str] = ()):
        super().__init__(message)
        self.lightpaths = tuple(lightpaths)


@dataclass(frozen=True)
class TpaSettings:
    """Knobs of the stage-2 pipeline.

    ``distance_penalty`` is the weight on sum 1/d; ``"auto"`` calibrates it
    to ``auto_penalty_fraction`` of the transponder power at the heuristic
    start. ``refine`` enables the discrete improvement pass after rounding.
    """

    distance_penalty: float | str = "auto"
    auto_penalty_fraction: float = 0.01
    refine: bool = True
    refine_passes: int = 3
    band_margin: float = 0.98

    def __post_init__(self):
        if self.distance_penalty != "auto" and not float(self.distance_penalty) >= 0:
            raise ParameterDomainError("distance_penalty must be 'auto' or nonnegative")
        if not 0 < self.auto_penalty_fraction < 1:
            raise ParameterDomainError("auto_penalty_fraction must lie in (0, 1)")


# ------------------------------------------------------------------ geometry
@dataclass(frozen=True)
class Geometry:
    """Everything stage 2 needs from stage 1, keyed by lightpath id."""

    lightpaths: tuple[Lightpath, ...]
    spans: dict[str, int]
    loads: dict[str, float]
    pairs: dict[tuple[str, str], int]          # (lower, upper) in spectral order -> shared spans
    neighbours: tuple[tuple[str, str], ...]    # adjacent (lower, upper) on some link
    link_orders: dict[str, tuple[str, ...]]

    @property
    def ids(self) -> tuple[str, ...]:
        return tuple(lp.id for lp in self.lightpaths)

    def shared(self, a: str, b: str) -> int:
        return self.pairs.get((a, b)) or self.pairs.get((b, a)) or 0


def lightpath_geometry(rgo: RgoSolution, params: Params) -> Geometry:
    lps = tuple(rgo.lightpaths())
    by_tx = {lp.tx: lp for lp in lps}
    occupants: dict[str, set] = {}
    for lp in lps:
        for l in lp.path.links:
            occupants.setdefault(l, set()).add(lp.id)
    link_orders = {}
    for l in sorted(occupants):
        order = rgo.spectral_order.get(l)
        if order is None:
            raise OrderingMissingError(f"no spectral order for link {l!r}")
        ids = tuple(by_tx[tx].id if tx in by_tx else None for tx in order)
        if None in ids or sorted(ids) != sorted(occupants[l]):
            raise OrderingMissingError(f"spectral order on link {l!r} is not a permutation of its occupants")
        link_orders[l] = ids
    paths = {lp.id: lp.path for lp in lps}
    pairs: dict[tuple[str, str], int] = {}
    neighbours = []
    seen = set()
    for l, ids in link_orders.items():
        for lo, hi in zip(ids, ids[1:]):
            if (lo, hi) not in seen:
                seen.add((lo, hi))
                neighbours.append((lo, hi))
        for i, j in combinations(range(len(ids)), 2):
            lo, hi = ids[i], ids[j]
            if (lo, hi) in pairs or (hi, lo) in pairs:
                continue
            pairs[(lo, hi)] = shared_spans(paths[lo], paths[hi], params.phys)
    return Geometry(lps, {lp.id: span_count(lp.path, params.phys) for lp in lps},
                    {lp.id: lp.load for lp in lps}, pairs, tuple(neighbours), link_orders)


# ------------------------------------------------------------------- program
@dataclass(frozen=True)
class TpaVariables:
    """Variable layout: free transformed variables by key, fixed ones by natural value.

    Keys are ``(lightpath, kind)`` with kind in ``c r p w t b`` or
    ``("d", i, j)`` for the carrier distance seen by i from interferer j.
    """

    index: dict
    fixed: dict
    names: tuple[str, ...]

    @property
    def n(self) -> int:
        return len(self.index)


def _to_var(kind: str, value: float) -> float:
    return math.log(value) if kind in _LOG_KINDS or kind == "d" else value


def _from_var(kind: str, value: float) -> float:
    return math.exp(value) if kind in _LOG_KINDS or kind == "d" else value


class TpaObjective:
    """Sum of transponder powers plus the distance penalty, separable in the variables."""

    def __init__(self, const: float, coding: list[tuple[int, float]], subcarrier: list[int], penalty: float,
                 distances: list[int], fft: float, dsp: float):
        self.const = const
        self.r_idx = np.array([i for i, _ in coding], dtype=int)
        self.r_w = np.array([w for _, w in coding], dtype=float)
        self.b_idx = np.array(subcarrier, dtype=int)
        self.d_idx = np.array(distances, dtype=int)
        self.penalty = penalty
        self.fft = fft
        self.dsp = dsp

    def _parts(self, x):
        er = self.r_w * np.exp(-x[self.r_idx])
        b = x[self.b_idx]
        eb = np.exp(LN2 * b)
        ed = self.penalty * np.exp(-x[self.d_idx])
        return er, b, eb, ed

    def transponder_power(self, x) -> float:
        er, b, eb, _ed = self._parts(x)
        return float(self.const + er.sum() + ((self.fft * b + self.dsp) * eb).sum())

    def distance_penalty(self, x) -> float:
        return float(self._parts(x)[3].sum())

    def value(self, x):
        er, b, eb, ed = self._parts(x)
        return float(self.const + er.sum() + ((self.fft * b + self.dsp) * eb).sum() + ed.sum())

    def derivatives(self, x):
        er, b, eb, ed = self._parts(x)
        grad = np.zeros(len(x))
        hess = np.zeros(len(x))
        lin = self.fft * b + self.dsp
        np.add.at(grad, self.r_idx, -er)
        np.add.at(hess, self.r_idx, er)
        np.add.at(grad, self.b_idx, self.fft * eb + LN2 * lin * eb)
        np.add.at(hess, self.b_idx, 2.0 * LN2 * self.fft * eb + LN2 * LN2 * lin * eb)
        np.add.at(grad, self.d_idx, -ed)
        np.add.at(hess, self.d_idx, ed)
        return self.value(x), grad, hess


@dataclass
class ConvexProgram:
    geometry: Geometry
    params: Params
    fiber_bandwidth: float
    variables: TpaVariables
    problem: SmoothProblem
    families: tuple[str, ...]
    penalty: float
    dropped: tuple[str, ...] = ()

    @property
    def objective(self) -> TpaObjective:
        return self.problem.objective

    def family_counts(self) -> dict[str, int]:
        out: dict[str, int] = {}
        for fam in self.families:
            out[fam] = out.get(fam, 0) + 1
        return out

    def decode(self, x: np.ndarray) -> tuple[dict[str, dict[str, float]], dict[tuple[str, str], float]]:
        values = {i: {} for i in self.geometry.ids}
        dist = {}
        for key, j in self.variables.index.items():
            if key[0] == "d":
                dist[(key[1], key[2])] = math.exp(x[j])
            else:
                values[key[0]][key[1]] = _from_var(key[1], x[j])
        for key, v in self.variables.fixed.items():
            if key[0] != "d":
                values[key[0]][key[1]] = v
        return values, dist

    def encode(self, values: Mapping[str, Mapping[str, float]], dist: Mapping | None = None) -> np.ndarray:
        """Transformed vector from natural values; gaps are filled by :meth:`heuristic_start`."""
        base_vals, base_dist = self.heuristic_values()
        x = np.empty(self.variables.n)
        for key, j in self.variables.index.items():
            if key[0] == "d":
                v = (dist or {}).get((key[1], key[2]), base_dist[(key[1], key[2])])
                x[j] = math.log(v)
            else:
                v = values.get(key[0], {}).get(key[1], base_vals[key[0]][key[1]])
                x[j] = _to_var(key[1], v)
        return x

    def heuristic_values(self) -> tuple[dict[str, dict[str, float]], dict[tuple[str, str], float]]:
        return generous_spectrum_start(self.geometry, self.params, self.fiber_bandwidth, self.variables.fixed)

    def heuristic_start(self) -> np.ndarray:
        vals, dist = self.heuristic_values()
        return self.encode(vals, dist)


def _value(fixed: Mapping, key, default: float) -> float:
    return fixed.get(key, default)


def generous_spectrum_start(geo: Geometry, params: Params, bandwidth: float, fixed: Mapping,
                            margin: float = 0.98) -> tuple[dict, dict]:
    """Spread-out starting configuration.

    Mid-box c and r, half a bit of rate headroom on b, single-channel optimal
    launch power, first-fit carrier placement in spectral order stretched
    over the band, t just above its bound and d at half the carrier spacing.
    """
    lim = params.limits
    F = params.phys.subcarrier_spacing
    G = params.phys.guard_band
    k = params.constants
    bmax = lim.max_subcarrier_exponent
    vals: dict[str, dict[str, float]] = {}
    for lp in geo.lightpaths:
        i = lp.id
        c = _value(fixed, (i, "c"), 0.5 * (min(lim.modulation_levels) + max(lim.modulation_levels)))
        r = _value(fixed, (i, "r"), 0.5 * (min(lim.coding_rates) + max(lim.coding_rates)))
        need = math.log2(max(geo.loads[i], 1e-300) / (2.0 * r * c * F))
        b = _value(fixed, (i, "b"), min(max(need + 0.5, MIN_EXPONENT + 0.5), bmax - 0.25))
        delta = 2.0 ** b * F
        p = _value(fixed, (i, "p"), phy.optimal_single_power(k, delta))
        vals[i] = {"c": c, "r": r, "b": b, "p": p, "t": 1.1 * (1.0 + phy.FIT_LEVEL_SLOPE * c), "delta": delta}
    # first fit in spectral order: lower occupants of every link are placed first
    upper_edge: dict[str, float] = {}
    placed = {}
    for i in _topological_order(geo):
        lp_links = next(lp.path.links for lp in geo.lightpaths if lp.id == i)
        half = 0.5 * vals[i]["delta"]
        lowest = max([upper_edge.get(l, -G) + G for l in lp_links] + [0.0]) + half
        placed[i] = lowest
        for l in lp_links:
            upper_edge[l] = lowest + half
    top = max((placed[i] + 0.5 * vals[i]["delta"] for i in placed), default=bandwidth)
    stretch = max(margin * bandwidth / top, 1.0)
    for i in placed:
        vals[i]["w"] = placed[i] * stretch
    dist = {}
    for (lo, hi) in geo.pairs:
        if geo.pairs[(lo, hi)]:
            gap = 0.5 * abs(vals[hi]["w"] - vals[lo]["w"])
            dist[(lo, hi)] = dist[(hi, lo)] = max(gap, 1.0)
    for i in vals:
        vals[i].pop("delta")
    return vals, dist


def _topological_order(geo: Geometry) -> list[str]:
    """Lightpaths ordered so every link's lower occupants come first."""
    after: dict[str, set] = {i: set() for i in geo.ids}
    indeg = {i: 0 for i in geo.ids}
    for ids in geo.link_orders.values():
        for lo, hi in zip(ids, ids[1:]):
            if hi not in after[lo]:
                after[lo].add(hi)
                indeg[hi] += 1
    ready = sorted(i for i, d in indeg.items() if d == 0)
    out = []
    while ready:
        i = ready.pop(0)
        out.append(i)
        for j in sorted(after[i]):
            indeg[j] -= 1
            if indeg[j] == 0:
                ready.append(j)
        ready.sort()
    if len(out) != len(indeg):
        raise OrderingMissingError("spectral orders on different links contradict each other")
    return out


def _layout(geo: Geometry, lim: TransponderLimits, fixed: Mapping) -> TpaVariables:
    fixed = dict(fixed)
    if len(lim.modulation_levels) == 1:
        for i in geo.ids:
            fixed.setdefault((i, "c"), float(lim.modulation_levels[0]))
    if len(lim.coding_rates) == 1:
        for i in geo.ids:
            fixed.setdefault((i, "r"), float(lim.coding_rates[0]))
    index = {}
    names = []
    for i in geo.ids:
        table = (i, "c") in fixed and (i, "r") in fixed
        for kind in KINDS:
            if kind == "t" and table:
                continue
            key = (i, kind)
            if key in fixed:
                continue
            index[key] = len(names)
            names.append(f"{kind}[{i}]")
    for (lo, hi), n_shared in geo.pairs.items():
        if not n_shared:
            continue
        for a, b in ((lo, hi), (hi, lo)):
            index[("d", a, b)] = len(names)
            names.append(f"d[{a},{b}]")
    return TpaVariables(index, fixed, tuple(names))


def build_program(rgo: RgoSolution | Geometry, params: Params, fiber_bandwidth: float, *,
                  fixed: Mapping | None = None, settings: TpaSettings = TpaSettings(),
                  penalty: float | None = None) -> ConvexProgram:
    """Assemble the log-domain program for the lightpaths of ``rgo``.

    ``fixed`` maps ``(lightpath id, kind) -> natural value`` for kinds c, r,
    b, p. A lightpath whose c and r are both fixed uses the exact table
    threshold; otherwise the posynomial fit with the auxiliary t.
    """
    geo = rgo if isinstance(rgo, Geometry) else lightpath_geometry(rgo, params)
    lim = params.limits
    phys = params.phys
    k = params.constants
    F = phys.subcarrier_spacing
    G = phys.guard_band
    B = fiber_bandwidth
    var = _layout(geo, lim, fixed or {})
    for (i, kind), value in var.fixed.items():
        if kind not in ("c", "r", "b", "p") or not value > 0:
            raise ParameterDomainError(f"cannot fix {kind} of {i} to {value!r}")

    constraints: list[list[tuple[dict, float]]] = []
    families: list[str] = []
    dropped: list[str] = []

    def add(family: str, label: str, terms: list[tuple[dict, float]]):
        folded = []
        for coefs, offset in terms:
            free = {}
            for key, a in coefs.items():
                if key in var.index:
                    free[var.index[key]] = free.get(var.index[key], 0.0) + a
                elif key in var.fixed:
                    offset += a * _to_var(key[1], var.fixed[key])
                else:
                    raise KeyError(f"unknown variable {key}")
            folded.append((free, offset))
        if all(not free for free, _ in folded):
            offsets = np.array([o for _, o in folded])
            top = offsets.max()
            value = top + math.log(np.exp(offsets - top).sum())
            if value <= _EXACT:
                dropped.append(f"{family}:{label}")
                return
        constraints.append(folded)
        families.append(family)

    rate_exp, level_slope, level_exp = phy.FIT_RATE_EXPONENT, phy.FIT_LEVEL_SLOPE, phy.FIT_LEVEL_EXPONENT
    for lp in geo.lightpaths:
        i = lp.id
        n_i = geo.spans[i]
        table = (i, "c") in var.fixed and (i, "r") in var.fixed
        if table:
            head, head_offset = {}, math.log(phy.theta_lookup(var.fixed[(i, "c")], var.fixed[(i, "r")]))
        else:
            head, head_offset = {(i, "r"): rate_exp, (i, "t"): level_exp}, 0.0
        qos = [({**head, (i, "p"): -1.0, (i, "b"): LN2}, head_offset + math.log(k.ase_psd * F * n_i)),
               ({**head, (i, "p"): 2.0}, head_offset + math.log(k.sci_coefficient * n_i))]
        for j in geo.ids:
            shared = geo.shared(i, j) if j != i else 0
            if shared:
                qos.append(({**head, (j, "p"): 2.0, (j, "b"): -LN2, ("d", i, j): -1.0},
                            head_offset + math.log(k.xci_weight * k.nli_coefficient * shared / F)))
        add("qos", i, qos)
        add("band_upper", i, [({(i, "b"): LN2}, math.log(0.5 * F / B)), ({(i, "w"): 1.0}, -math.log(B))])
        add("band_lower", i, [({(i, "b"): LN2, (i, "w"): -1.0}, math.log(0.5 * F))])
        load = geo.loads[i]
        add("rate", i, [({(i, "r"): -1.0, (i, "c"): -1.0, (i, "b"): -LN2}, math.log(0.5 * load / F))])
        if not table:
            add("t_def", i, [({(i, "t"): -1.0}, 0.0), ({(i, "c"): 1.0, (i, "t"): -1.0}, math.log(level_slope))])

    for lo, hi in geo.neighbours:
        add("non_overlap", f"{lo}<{hi}", [
            ({(lo, "w"): 1.0, (hi, "w"): -1.0}, 0.0),
            ({(lo, "b"): LN2, (hi, "w"): -1.0}, math.log(0.5 * F)),
            ({(hi, "w"): -1.0}, math.log(G)),
            ({(hi, "b"): LN2, (hi, "w"): -1.0}, math.log(0.5 * F)),
        ])
    for (lo, hi), n_shared in geo.pairs.items():
        if not n_shared:
            continue
        for a, b in ((hi, lo), (lo, hi)):
            add("distance", f"{a},{b}", [({("d", a, b): 1.0, (hi, "w"): -1.0}, 0.0),
                                         ({(lo, "w"): 1.0, (hi, "w"): -1.0}, 0.0)])

    cmin, cmax = min(lim.modulation_levels), max(lim.modulation_levels)
    rmin, rmax = min(lim.coding_rates), max(lim.coding_rates)
    for i in geo.ids:
        if (i, "c") in var.index:
            add("bound", f"c_max[{i}]", [({(i, "c"): 1.0}, -math.log(cmax))])
            add("bound", f"c_min[{i}]", [({(i, "c"): -1.0}, math.log(cmin))])
        if (i, "r") in var.index:
            add("bound", f"r_max[{i}]", [({(i, "r"): 1.0}, -math.log(rmax))])
            add("bound", f"r_min[{i}]", [({(i, "r"): -1.0}, math.log(rmin))])
        if (i, "b") in var.index:
            add("bound", f"b_max[{i}]", [({(i, "b"): 1.0}, -lim.max_subcarrier_exponent)])

    pw = params.power
    const = 0.0
    coding = []
    subcarrier = []
    for i in geo.ids:
        const += pw.tx_bias + pw.rx_bias
        if (i, "r") in var.index:
            coding.append((var.index[(i, "r")], pw.encoder + pw.decoder))
        else:
            const += (pw.encoder + pw.decoder) / var.fixed[(i, "r")]
        if (i, "b") in var.index:
            subcarrier.append(var.index[(i, "b")])
        else:
            b = var.fixed[(i, "b")]
            const += (pw.fft_point * b + pw.dsp_per_subcarrier) * 2.0 ** b
    d_idx = [j for key, j in var.index.items() if key[0] == "d"]

    n = var.n
    lb = np.full(n, -np.inf)
    for i in geo.ids:
        if (i, "b") in var.index:
            lb[var.index[(i, "b")]] = MIN_EXPONENT
    cons = LseConstraints.from_terms(n, constraints)

    weight = 0.0 if penalty is None else penalty
    objective = TpaObjective(const, coding, subcarrier, weight, d_idx, pw.fft_point, pw.dsp_per_subcarrier)
    prog = ConvexProgram(geo, params, B, var, SmoothProblem(n, objective, cons, lb, var.names), tuple(families),
                         weight, tuple(dropped))
    if penalty is None:
        prog.penalty = objective.penalty = _auto_penalty(prog, settings)
    return prog


def _auto_penalty(prog: ConvexProgram, settings: TpaSettings) -> float:
    if settings.distance_penalty != "auto":
        return float(settings.distance_penalty)
    if not prog.objective.d_idx.size:
        return 0.0
    x = prog.heuristic_start()
    inv = float(np.exp(-x[prog.objective.d_idx]).sum())
    return settings.auto_penalty_fraction * prog.objective.transponder_power(x) / inv


# ----------------------------------------------------------- relaxed solves
@dataclass
class RelaxedSolution:
    program: ConvexProgram
    x: np.ndarray
    values: dict[str, dict[str, float]]
    distances: dict[tuple[str, str], float]
    transponder_power: float
    penalty_value: float
    result: SolveResult
    runtime_s: float

    @property
    def kkt_residual(self) -> float:
        return self.result.kkt_residual


def solve_relaxed(prog: ConvexProgram, solver: SolverParams = SolverParams(), start: np.ndarray | None = None,
                  *, trace: bool = False) -> RelaxedSolution:
    """Continuous optimum of ``prog``.

    Raises :class:`InfeasibleProblemError` with a phase-1 certificate when no
    strictly feasible point exists and :class:`NonConvergenceError` (carrying
    the best iterate) when the barrier method hits its iteration cap.
    """
    t0 = time.perf_counter()
    x0 = prog.heuristic_start() if start is None else np.asarray(start, dtype=float)
    cons = prog.problem.all_constraints
    from .solver.kernels import lse_values

    if cons.m and not np.max(lse_values(cons, x0)) < 0:
        p1 = phase1_feasible_point(prog.problem, solver, x0)
        if not p1.feasible:
            raise InfeasibleProblemError(f"transponder program infeasible (bound {p1.bound:.3e})", p1)
        x0 = p1.x
    result = minimize(prog.problem, solver, x0, trace=trace)
    if not result.converged:
        raise NonConvergenceError(f"barrier method did not converge (KKT residual {result.kkt_residual:.2e})",
                                  result)
    values, dist = prog.decode(result.x)
    return RelaxedSolution(prog, result.x, values, dist, prog.objective.transponder_power(result.x),
                           prog.objective.distance_penalty(result.x), result, time.perf_counter() - t0)


def _try_solve(prog: ConvexProgram, solver: SolverParams, start: np.ndarray | None) -> RelaxedSolution | None:
    try:
        return solve_relaxed(prog, solver, start)
    except InfeasibleProblemError:
        return None


# ------------------------------------------------------------------ rounding
@dataclass(frozen=True)
class RoundingEpoch:
    precision: float
    fixed: tuple[tuple[str, str, float, float], ...]  # (lightpath, kind, relaxed, rounded)
    backtracked: bool = False


@dataclass
class RoundingOutcome:
    fixed: dict
    relaxed: RelaxedSolution
    epochs: list[RoundingEpoch] = field(default_factory=list)

    @property
    def outer_iterations(self) -> int:
        return len(self.epochs)


def nearest_valid(value: float, grid: Sequence[float], radius: float) -> float | None:
    """Closest grid value within ``radius`` (ties keep grid order)."""
    best = None
    for g in grid:
        gap = abs(value - g)
        if gap <= radius + _EXACT and (best is None or gap < abs(value - best) - 1e-15):
            best = g
    return best


def _backtrack_picks(ids: Sequence[str], values: Mapping, params: Params) -> list[tuple]:
    """Table (c, r) per lightpath with threshold <= the fitted threshold at the relaxed point.

    Among those pairs the one carrying most bits per symbol (c * r) wins, so
    the subcarrier exponent has to grow least; with no such pair the pair
    of lowest threshold is used.
    """
    out = []
    for i in ids:
        c_rel, r_rel = values[i]["c"], values[i]["r"]
        target = phy.theta_fit(c_rel, r_rel, extrapolate=True)
        pairs = [(c, r) for c in params.limits.modulation_levels for r in params.limits.coding_rates]
        ok = [pr for pr in pairs if phy.theta_lookup(*pr) <= target * (1 + _EXACT)]
        if ok:
            c, r = max(ok, key=lambda pr: (pr[0] * pr[1], -phy.theta_lookup(*pr)))
        else:
            c, r = min(pairs, key=lambda pr: phy.theta_lookup(*pr))
        out += [(i, "c", c_rel, float(c)), (i, "r", r_rel, float(r))]
    return out


def _grids(lim: TransponderLimits) -> dict[str, tuple[float, ...]]:
    return {"c": tuple(float(c) for c in sorted(lim.modulation_levels)), "r": tuple(sorted(lim.coding_rates))}


def round_and_fix(geo: Geometry, params: Params, fiber_bandwidth: float, *, solver: SolverParams = SolverParams(),
                  settings: TpaSettings = TpaSettings(), fixed: Mapping | None = None, penalty: float | None = None,
                  relaxed: RelaxedSolution | None = None) -> RoundingOutcome:
    """Neighbourhood rounding of c and r with re-solves until all are table values.

    Each epoch grows the radius from the initial precision in steps until at
    least one free c or r lies within it, fixes every such variable to its
    nearest table value and re-solves. If the re-solve is infeasible, the
    lightpaths touched in that epoch get both c and r re-fixed once to a
    table pair whose tabulated threshold does not exceed the fitted one the
    relaxed point already meets. If that retry fails too, rounding stops.
    """
    rp = params.rounding
    grids = _grids(params.limits)
    fixed = dict(fixed or {})
    if relaxed is None:
        prog = build_program(geo, params, fiber_bandwidth, fixed=fixed, settings=settings, penalty=penalty)
        relaxed = solve_relaxed(prog, solver)
    penalty = relaxed.program.penalty
    fixed.update(relaxed.program.variables.fixed)
    epochs: list[RoundingEpoch] = []
    cap = 2 * len(geo.ids)
    while True:
        free = [(i, kind, relaxed.values[i][kind]) for i in geo.ids for kind in ("c", "r") if (i, kind) not in fixed]
        if not free:
            break
        if len(epochs) >= cap:
            raise RoundingFailure("rounding did not finish within the iteration bound",
                                  {"epochs": len(epochs), "free": len(free)})
        radius = rp.initial_precision
        while True:
            picks = [(i, kind, v, nearest_valid(v, grids[kind], radius)) for i, kind, v in free]
            picks = [pk for pk in picks if pk[3] is not None]
            if picks:
                break
            radius += rp.precision_step
        trial = dict(fixed)
        trial.update({(i, kind): g for i, kind, _v, g in picks})
        prog = build_program(geo, params, fiber_bandwidth, fixed=trial, settings=settings, penalty=penalty)
        warm = prog.encode(relaxed.values, relaxed.distances)
        solved = _try_solve(prog, solver, warm)
        epoch_back = False
        if solved is None:
            epoch_back = True
            picks = _backtrack_picks(sorted({pk[0] for pk in picks}), relaxed.values, params)
            trial = dict(fixed)
            trial.update({(i, kind): g for i, kind, _v, g in picks})
            prog = build_program(geo, params, fiber_bandwidth, fixed=trial, settings=settings, penalty=penalty)
            solved = _try_solve(prog, solver, prog.encode(relaxed.values, relaxed.distances))
            if solved is None:
                raise RoundingFailure("rounded assignment infeasible even after backtracking",
                                      {"epoch": len(epochs), "picks": picks})
        log.debug("rounding epoch %d radius %.3g fixed %d variables", len(epochs) + 1, radius, len(picks))
        epochs.append(RoundingEpoch(radius, tuple(picks), epoch_back))
        fixed = trial
        relaxed = solved
    return RoundingOutcome(fixed, relaxed, epochs)


# --------------------------------------------------------------- finalising
@dataclass(frozen=True)
class TransponderConfig:
    lightpath: str
    node: Hashable
    transponder: int
    c: float
    b: float
    r: float
    p: float          # W
    omega: float      # Hz
    bandwidth: float  # Hz

    def row(self) -> dict:
        return {"node": self.node, "transponder": self.transponder, "c": self.c, "b": self.b, "r": self.r,
                "p_mW": self.p * 1e3, "ω_GHz": self.omega * 1e-9, "Δ_GHz": self.bandwidth * 1e-9}


CONFIG_COLUMNS = ("node", "transponder", "c", "b", "r", "p_mW", "ω_GHz", "Δ_GHz")


def configs_to_csv(cfgs: Mapping[str, TransponderConfig]) -> str:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=CONFIG_COLUMNS, lineterminator="\n")
    writer.writeheader()
    for key in sorted(cfgs):
        writer.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in cfgs[key].row().items()})
    return buf.getvalue()


def configs_to_json(cfgs: Mapping[str, TransponderConfig]) -> str:
    return json.dumps([{"lightpath": c.lightpath, "node": c.node, "transponder": c.transponder, "c": c.c, "b": c.b,
                        "r": c.r, "p_w": c.p, "omega_hz": c.omega, "bandwidth_hz": c.bandwidth}
                       for _, c in sorted(cfgs.items())], indent=2)


def configs_from_json(text: str) -> dict[str, TransponderConfig]:
    out = {}
    for item in json.loads(text):
        cfg = TransponderConfig(item["lightpath"], item["node"], int(item["transponder"]), float(item["c"]),
                                float(item["b"]), float(item["r"]), float(item["p_w"]), float(item["omega_hz"]),
                                float(item["bandwidth_hz"]))
        out[cfg.lightpath] = cfg
    return out


def _configs(geo: Geometry, values: Mapping, params: Params) -> dict[str, TransponderConfig]:
    F = params.phys.subcarrier_spacing
    out = {}
    for lp in geo.lightpaths:
        v = values[lp.id]
        out[lp.id] = TransponderConfig(lp.id, lp.tx[0], lp.tx[1], v["c"], v["b"], v["r"], v["p"], v["w"],
                                       2.0 ** v["b"] * F)
    return out


def _discrete_power(assign: Mapping[str, tuple[float, float, float]], params: Params) -> float:
    return math.fsum(transponder_power(b, r, params.power) for (_c, r, b) in assign.values())


def _min_level(load: float, r: float, b: float, params: Params) -> float | None:
    F = params.phys.subcarrier_spacing
    for c in sorted(params.limits.modulation_levels):
        if 2.0 * r * c * 2.0 ** b * F >= load * (1 - 1e-12):
            return float(c)
    return None


def _assignment_fixed(assign: Mapping[str, tuple[float, float, float]], extra: Mapping | None = None) -> dict:
    fixed = dict(extra or {})
    for i, (c, r, b) in assign.items():
        fixed[(i, "c")], fixed[(i, "r")], fixed[(i, "b")] = c, r, b
    return fixed


def _feasible_point(geo, params, bandwidth, assign, extra, penalty, solver, warm) -> RelaxedSolution | None:
    prog = build_program(geo, params, bandwidth, fixed=_assignment_fixed(assign, extra), penalty=penalty)
    cons = prog.problem.all_constraints
    x0 = prog.encode(*warm) if warm else prog.heuristic_start()
    p1 = phase1_feasible_point(prog.problem, solver, x0)
    if not p1.feasible:
        return None
    values, dist = prog.decode(p1.x)
    return RelaxedSolution(prog, p1.x, values, dist, prog.objective.transponder_power(p1.x),
                           prog.objective.distance_penalty(p1.x), None, 0.0)


def refine_assignment(geo: Geometry, params: Params, bandwidth: float, assign: dict, warm: tuple, *,
                      extra: Mapping | None = None, penalty: float = 0.0, solver: SolverParams = SolverParams(),
                      passes: int = 3) -> tuple[dict, tuple]:
    """Greedy per-lightpath search for cheaper feasible (c, r, b) triples.

    For every cheaper (b, r) the smallest rate-feasible level c is tried
    (thresholds grow with c); candidates whose single-channel OSNR bound is
    below the table threshold are skipped without a solve.
    """
    k = params.constants
    F = params.phys.subcarrier_spacing
    bmax = int(math.floor(params.limits.max_subcarrier_exponent + _EXACT))
    fixed_p = extra or {}
    for _ in range(passes):
        improved = False
        order = sorted(geo.ids, key=lambda i: (-transponder_power(assign[i][2], assign[i][1], params.power), i))
        for i in order:
            current = transponder_power(assign[i][2], assign[i][1], params.power)
            cands = []
            for b in range(1, bmax + 1):
                for r in params.limits.coding_rates:
                    cost = transponder_power(b, r, params.power)
                    if cost >= current - 1e-12:
                        continue
                    c = _min_level(geo.loads[i], r, b, params)
                    if c is None:
                        continue
                    theta = phy.theta_lookup(c, r)
                    p_fixed = fixed_p.get((i, "p"))
                    delta = 2.0 ** b * F
                    if p_fixed is None:
                        bound = phy.max_single_osnr(k, delta, geo.spans[i])
                    else:
                        n_i = geo.spans[i]
                        bound = p_fixed / (k.ase_psd * n_i * delta + k.sci_coefficient * n_i * p_fixed ** 3)
                    if bound < theta:
                        continue
                    cands.append((cost, b, r, c))
            for cost, b, r, c in sorted(cands):
                trial = dict(assign)
                trial[i] = (c, r, float(b))
                found = _feasible_point(geo, params, bandwidth, trial, extra, penalty, solver, warm)
                if found is not None:
                    assign = trial
                    warm = (found.values, found.distances)
                    improved = True
                    break
        if not improved:
            break
    return assign, warm


@dataclass
class TpaResult:
    configs: dict[str, TransponderConfig]
    transponder_power: float
    relaxed_power: float
    relaxed: RelaxedSolution
    rounding: RoundingOutcome
    final: RelaxedSolution
    validation: "ValidationReport"
    runtime_s: float
    penalty: float


def _min_theta_level(load, r_grid, b, params):
    """(c, r) with the smallest table threshold that still carries ``load`` at exponent ``b``."""
    best = None
    for r in r_grid:
        c = _min_level(load, r, b, params)
        if c is not None:
            theta = phy.theta_lookup(c, r)
            if best is None or theta < best[0]:
                best = (theta, c, r)
    return None if best is None else (best[1], best[2])


def finalize(geo: Geometry, params: Params, bandwidth: float, outcome: RoundingOutcome, *,
             solver: SolverParams = SolverParams(), settings: TpaSettings = TpaSettings(),
             extra: Mapping | None = None, incumbents: Sequence[Mapping[str, TransponderConfig]] = ()
             ) -> tuple[dict, RelaxedSolution]:
    """Ceil b, optionally refine, and re-solve (p, w, d) with everything discrete fixed."""
    penalty = outcome.relaxed.program.penalty
    vals = outcome.relaxed.values
    assign = {}
    for i in geo.ids:
        b = float(math.ceil(vals[i]["b"] - _EXACT))
        b = max(b, MIN_EXPONENT)
        assign[i] = (float(outcome.fixed[(i, "c")]), float(outcome.fixed[(i, "r")]), b)
    warm = (vals, outcome.relaxed.distances)
    found = _feasible_point(geo, params, bandwidth, assign, extra, penalty, solver, warm)
    bmax = math.floor(params.limits.max_subcarrier_exponent + _EXACT)
    for bump in (0, 1):
        if found is not None:
            break
        # fall back to the most tolerant table pair that still carries the load,
        # then to the same one exponent higher
        safer = {}
        for i, (c, r, b) in assign.items():
            b2 = min(b + bump, bmax)
            pick = _min_theta_level(geo.loads[i], params.limits.coding_rates, b2, params)
            safer[i] = (pick[0], pick[1], b2) if pick else (c, r, b)
        found = _feasible_point(geo, params, bandwidth, safer, extra, penalty, solver, warm)
        if found is not None:
            assign = safer
    if found is None:
        raise RoundingFailure("integer subcarrier exponents leave no feasible launch power / spectrum",
                              {"assignment": assign})
    warm = (found.values, found.distances)
    for inc in incumbents:
        if set(inc) != set(geo.ids):
            continue
        cand = {i: (cfg.c, cfg.r, cfg.b) for i, cfg in inc.items()}
        if _discrete_power(cand, params) < _discrete_power(assign, params) - 1e-12:
            start = ({i: {"c": cfg.c, "r": cfg.r, "b": cfg.b, "p": cfg.p, "w": cfg.omega} for i, cfg in inc.items()},
                     None)
            hit = _feasible_point(geo, params, bandwidth, cand, extra, penalty, solver, start)
            if hit is not None:
                assign, warm = cand, (hit.values, hit.distances)
    if settings.refine:
        assign, warm = refine_assignment(geo, params, bandwidth, assign, warm, extra=extra, penalty=penalty,
                                         solver=solver, passes=settings.refine_passes)
    prog = build_program(geo, params, bandwidth, fixed=_assignment_fixed(assign, extra), penalty=penalty)
    final = solve_relaxed(prog, solver, prog.encode(*warm))
    return _configs(geo, final.values, params), final


def run_tpa(rgo: RgoSolution, params: Params, fiber_bandwidth: float, *, solver: SolverParams = SolverParams(),
            settings: TpaSettings = TpaSettings(), fixed_power: Mapping[str, float] | None = None,
            incumbents: Sequence[Mapping[str, TransponderConfig]] = (), trace: bool = False) -> TpaResult:
    """Relax, round, finalise and validate. ``fixed_power`` pins p (W) per lightpath id."""
    t0 = time.perf_counter()
    geo = lightpath_geometry(rgo, params)
    extra = {(i, "p"): p for i, p in (fixed_power or {}).items()}
    prog = build_program(geo, params, fiber_bandwidth, fixed=extra, settings=settings)
    relaxed = solve_relaxed(prog, solver, trace=trace)
    outcome = round_and_fix(geo, params, fiber_bandwidth, solver=solver, settings=settings, fixed=extra,
                            relaxed=relaxed)
    cfgs, final = finalize(geo, params, fiber_bandwidth, outcome, solver=solver, settings=settings, extra=extra,
                           incumbents=incumbents)
    report = validate_assignment(cfgs, rgo, params, fiber_bandwidth)
    power = math.fsum(transponder_power(c.b, c.r, params.power) for c in cfgs.values())
    return TpaResult(cfgs, power, relaxed.transponder_power, relaxed, outcome, final, report,
                     time.perf_counter() - t0, prog.penalty)


def fixed_power_feasibility(rgo: RgoSolution, params: Params, power_w: Mapping[str, float]) -> list[str]:
    """Lightpaths that cannot meet any table threshold at their fixed launch power, even alone."""
    geo = lightpath_geometry(rgo, params)
    k = params.constants
    F = params.phys.subcarrier_spacing
    bmax = int(math.floor(params.limits.max_subcarrier_exponent + _EXACT))
    bad = []
    for i in geo.ids:
        p = power_w[i]
        n_i = geo.spans[i]
        ok = False
        for b in range(1, bmax + 1):
            pick = _min_theta_level(geo.loads[i], params.limits.coding_rates, b, params)
            if pick is None:
                continue
            delta = 2.0 ** b * F
            if p / (k.ase_psd * n_i * delta + k.sci_coefficient * n_i * p ** 3) >= phy.theta_lookup(*pick):
                ok = True
                break
        if not ok:
            bad.append(i)
    return bad


# --------------------------------------------------------------- validation
@dataclass(frozen=True)
class Residual:
    family: str
    element: str
    slack: float  # relative, >= 0 when satisfied


@dataclass(frozen=True)
class ValidationReport:
    residuals: tuple[Residual, ...]
    tolerance: float = 1e-6

    @property
    def passed(self) -> bool:
        return all(r.slack >= -self.tolerance for r in self.residuals)

    @property
    def failures(self) -> tuple[Residual, ...]:
        return tuple(r for r in self.residuals if r.slack < -self.tolerance)

    @property
    def worst(self) -> float:
        return min((r.slack for r in self.residuals), default=math.inf)


def _rel(lhs: float, rhs: float) -> float:
    """Relative slack of ``lhs <= rhs``."""
    scale = max(abs(lhs), abs(rhs), 1e-300)
    return (rhs - lhs) / scale


def validate_assignment(cfgs: Mapping[str, TransponderConfig], rgo: RgoSolution, params: Params,
                        fiber_bandwidth: float, tolerance: float = 1e-6) -> ValidationReport:
    """Slack of every constraint in natural units with the table thresholds."""
    geo = lightpath_geometry(rgo, params)
    lim = params.limits
    G = params.phys.guard_band
    F = params.phys.subcarrier_spacing
    out: list[Residual] = []
    for i in geo.ids:
        if i not in cfgs:
            out.append(Residual("missing", i, -math.inf))
    if any(r.family == "missing" for r in out):
        return ValidationReport(tuple(out), tolerance)
    for i in geo.ids:
        cfg = cfgs[i]
        ok_c = any(abs(cfg.c - c) <= _EXACT for c in lim.modulation_levels)
        ok_r = any(abs(cfg.r - r) <= _EXACT for r in lim.coding_rates)
        ok_b = abs(cfg.b - round(cfg.b)) <= _EXACT and 0 < cfg.b <= lim.max_subcarrier_exponent + _EXACT
        out.append(Residual("discrete", i, 0.0 if (ok_c and ok_r and ok_b) else -1.0))
        out.append(Residual("bandwidth", i, _rel(abs(cfg.bandwidth - 2.0 ** cfg.b * F), 1e-9 * cfg.bandwidth)))
    for i in geo.ids:
        cfg = cfgs[i]
        out.append(Residual("band_lower", i, _rel(0.5 * cfg.bandwidth, cfg.omega)))
        out.append(Residual("band_upper", i, _rel(cfg.omega + 0.5 * cfg.bandwidth, fiber_bandwidth)))
        out.append(Residual("rate", i, _rel(geo.loads[i], 2.0 * cfg.r * cfg.c * cfg.bandwidth)))
    for l, ids in geo.link_orders.items():
        for lo, hi in zip(ids, ids[1:]):
            a, b = cfgs[lo], cfgs[hi]
            out.append(Residual("non_overlap", f"{l}:{lo}<{hi}",
                                _rel(a.omega + 0.5 * a.bandwidth + G, b.omega - 0.5 * b.bandwidth)))
    if all(r.family != "discrete" or r.slack == 0.0 for r in out):
        shared = {}
        dist = {}
        for (lo, hi), n_shared in geo.pairs.items():
            if n_shared:
                shared[(lo, hi)] = shared[(hi, lo)] = n_shared
                dist[(lo, hi)] = dist[(hi, lo)] = abs(cfgs[hi].omega - cfgs[lo].omega)
        ctx = phy.OsnrContext({i: cfgs[i].p for i in geo.ids}, {i: cfgs[i].bandwidth for i in geo.ids},
                              geo.spans, shared, dist, params.constants)
        for i in geo.ids:
            theta = phy.theta_lookup(cfgs[i].c, cfgs[i].r)
            try:
                psi = phy.osnr(ctx, i)
            except phy.OsnrSingularityError:
                psi = 0.0
            out.append(Residual("qos", i, _rel(theta, psi)))
    return ValidationReport(tuple(out), tolerance)
