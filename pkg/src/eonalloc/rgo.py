"""Stage 1: traffic partitioning, shortest-path routing, grooming and spectral ordering.

The heuristic follows the two passes of the allocation algorithm: demands are
first cut into full-capacity pieces that get dedicated transponder pairs, and
the remainders are then groomed one at a time (largest rate x path length
first) onto the decomposition of their shortest path with the smallest
maximum sub-path length that still has room.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from itertools import combinations
from typing import Hashable, Iterable, Mapping, Sequence

from .model import NetworkModel, Node, RgoWeights, TrafficRequest, TransponderLimits
from .topology import Path, shortest_path

Transponder = tuple  # (node, index), index in 1..T

_REL_TOL = 1e-9


class CapacityExceededError(RuntimeError):
    """A node ran out of transmit or receive transponders."""


class OrderingMissingError(ValueError):
    pass


def lightpath_id(tx: Transponder) -> str:
    return f"{tx[0]}/{tx[1]}"


@dataclass(frozen=True)
class Lightpath:
    tx: Transponder
    rx: Transponder
    path: Path
    flows: Mapping[Hashable, float]

    @property
    def id(self) -> str:
        return lightpath_id(self.tx)

    @property
    def load(self) -> float:
        return math.fsum(self.flows.values())


@dataclass
class RgoSolution:
    """Routing/grooming decision in the variables of the ILP.

    ``activations`` holds the (transmit transponder, link) incidences with
    x = 1, ``pairings`` the (tx, rx) matches with d = 1; ``add_flows`` and
    ``drop_flows`` map ``(transponder, request id) -> bit/s``.
    """

    routes: dict[Transponder, Path]
    activations: frozenset
    pairings: frozenset
    add_flows: dict
    drop_flows: dict
    spectral_order: dict[str, tuple]
    link_ids: frozenset
    capacity: float

    @classmethod
    def from_lightpaths(cls, lightpaths: Iterable[Lightpath], net: NetworkModel, capacity: float) -> "RgoSolution":
        lightpaths = sorted(lightpaths, key=lambda lp: _tx_key(lp.tx))
        routes = {lp.tx: lp.path for lp in lightpaths}
        activations = frozenset((lp.tx, l) for lp in lightpaths for l in lp.path.links)
        pairings = frozenset((lp.tx, lp.rx) for lp in lightpaths)
        add_flows = {(lp.tx, q): rate for lp in lightpaths for q, rate in lp.flows.items()}
        drop_flows = {(lp.rx, q): rate for lp in lightpaths for q, rate in lp.flows.items()}
        return cls(routes, activations, pairings, add_flows, drop_flows,
                   spectral_order(lightpaths, net), frozenset(net.link_by_id), capacity)

    def lightpaths(self) -> list[Lightpath]:
        partner: dict = {}
        for tx, rx in sorted(self.pairings, key=lambda p: (_tx_key(p[0]), _tx_key(p[1]))):
            partner.setdefault(tx, rx)
        flows: dict = {}
        for (tx, q), rate in self.add_flows.items():
            flows.setdefault(tx, {})[q] = rate
        out = []
        for tx in sorted(self.routes, key=_tx_key):
            if tx not in partner:
                raise ValueError(f"transmit transponder {tx} has a route but no receive partner")
            out.append(Lightpath(tx, partner[tx], self.routes[tx], dict(flows.get(tx, {}))))
        return out

    def used_links(self) -> frozenset:
        return frozenset(l for _tx, l in self.activations)

    @property
    def active_transponders(self) -> int:
        return len(self.routes)

    # ------------------------------------------------------------- serialise
    def to_dict(self) -> dict:
        return {
            "capacity_bps": self.capacity,
            "lightpaths": [
                {"id": lp.id, "tx": list(lp.tx), "rx": list(lp.rx), "route": lp.path.to_dict(),
                 "flows": [[q, rate] for q, rate in lp.flows.items()]}
                for lp in self.lightpaths()
            ],
            "spectral_order": {l: [list(tx) for tx in order] for l, order in sorted(self.spectral_order.items())},
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    @classmethod
    def from_dict(cls, data: Mapping, net: NetworkModel) -> "RgoSolution":
        lps = [Lightpath(tuple(item["tx"]), tuple(item["rx"]), Path.from_dict(item["route"]),
                         {q if not isinstance(q, list) else tuple(q): float(rate) for q, rate in item["flows"]})
               for item in data["lightpaths"]]
        sol = cls.from_lightpaths(lps, net, float(data["capacity_bps"]))
        sol.spectral_order = {l: tuple(tuple(tx) for tx in order) for l, order in data["spectral_order"].items()}
        return sol

    @classmethod
    def from_json(cls, text: str, net: NetworkModel) -> "RgoSolution":
        return cls.from_dict(json.loads(text), net)


def _tx_key(tx: Transponder):
    return (str(type(tx[0])), tx[0], tx[1])


def ordering_key(lp: Lightpath):
    """Decreasing rate x length product, ties by transponder."""
    return (-lp.load * lp.path.length_km, _tx_key(lp.tx))


def spectral_order(lightpaths: Iterable[Lightpath], net: NetworkModel) -> dict[str, tuple]:
    """Per-link order of the occupants.

    One global ranking restricted to each link, so two lightpaths meeting on
    several links always appear in the same relative order.
    """
    ranked = sorted(lightpaths, key=ordering_key)
    order: dict[str, list] = {}
    for lp in ranked:
        for l in lp.path.links:
            order.setdefault(l, []).append(lp.tx)
    return {l: tuple(txs) for l, txs in order.items()}


# ------------------------------------------------------------ partitioning
@dataclass(frozen=True)
class TrafficPiece:
    request: TrafficRequest
    rate: float
    full: bool


def partition_traffic(requests: Sequence[TrafficRequest], limits: TransponderLimits) -> list[TrafficPiece]:
    """Cut every demand into full-capacity pieces plus at most one remainder."""
    cap = limits.capacity
    pieces = []
    for q in requests:
        rate = q.rate
        while rate >= cap * (1 - _REL_TOL):
            pieces.append(TrafficPiece(q, cap, True))
            rate -= cap
        if rate > cap * _REL_TOL:
            pieces.append(TrafficPiece(q, rate, False))
    return pieces


# ---------------------------------------------------------- transponder banks
@dataclass
class OpenLightpath:
    tx: Transponder
    rx: Transponder
    path: Path
    flows: dict = field(default_factory=dict)

    @property
    def load(self) -> float:
        return math.fsum(self.flows.values())

    def freeze(self) -> Lightpath:
        return Lightpath(self.tx, self.rx, self.path, dict(self.flows))


class TransponderState:
    """Mutable fill state of every node's transponder bank during grooming."""

    def __init__(self, net: NetworkModel, capacity: float):
        self.net = net
        self.capacity = capacity
        self.tx_used = {v: 0 for v in net.nodes}
        self.rx_used = {v: 0 for v in net.nodes}
        self.lightpaths: list[OpenLightpath] = []

    def can_open(self, u: Node, w: Node) -> bool:
        bank = self.net.transponders_per_node
        return self.tx_used[u] < bank and self.rx_used[w] < bank

    def open(self, path: Path, flows: Mapping | None = None) -> OpenLightpath:
        u, w = path.source, path.destination
        if not self.can_open(u, w):
            raise CapacityExceededError(f"transponder bank exhausted for lightpath {u!r}->{w!r}")
        self.tx_used[u] += 1
        self.rx_used[w] += 1
        lp = OpenLightpath((u, self.tx_used[u]), (w, self.rx_used[w]), path, dict(flows or {}))
        self.lightpaths.append(lp)
        return lp

    def existing(self, u: Node, w: Node) -> list[OpenLightpath]:
        return [lp for lp in self.lightpaths if lp.path.source == u and lp.path.destination == w]

    def remaining(self, lp: OpenLightpath) -> float:
        return max(self.capacity - lp.load, 0.0)

    def best_available(self, u: Node, w: Node) -> float:
        return max((self.remaining(lp) for lp in self.existing(u, w)), default=0.0)

    def best_fit(self, u: Node, w: Node, demand: float) -> OpenLightpath | None:
        """Most loaded existing lightpath u->w that still fits ``demand``."""
        fits = [lp for lp in self.existing(u, w) if self.remaining(lp) >= demand - _REL_TOL * self.capacity]
        if not fits:
            return None
        return min(fits, key=lambda lp: (self.remaining(lp), _tx_key(lp.tx)))


# -------------------------------------------------------- grooming scenarios
@dataclass(frozen=True)
class GroomScenario:
    """Decomposition of a path into contiguous sub-paths at ``nodes``."""

    nodes: tuple
    cuts: tuple[int, ...]          # node positions along the original path, endpoints included
    segment_lengths: tuple[float, ...]
    matc: float
    mspl: float

    @property
    def direct(self) -> bool:
        return len(self.cuts) == 2


def enumerate_groom_scenarios(path: Path, state: TransponderState) -> list[GroomScenario]:
    """All 2**(h-1) decompositions of ``path`` scored by MATC and MSPL.

    A multi-segment scenario can only ride existing lightpaths, so each
    segment offers the largest spare capacity among lightpaths already
    running between its ends. The single-segment scenario may also open a
    fresh pair, which offers the full capacity.
    """
    h = path.hops
    inner = range(1, h)
    scenarios = []
    for k in range(h):
        for chosen in combinations(inner, k):
            cuts = (0, *chosen, h)
            lengths = tuple(math.fsum(path.link_lengths[i:j]) for i, j in zip(cuts, cuts[1:]))
            avail = []
            for i, j in zip(cuts, cuts[1:]):
                u, w = path.nodes[i], path.nodes[j]
                best = state.best_available(u, w)
                if len(cuts) == 2 and state.can_open(u, w):
                    best = max(best, state.capacity)
                avail.append(best)
            scenarios.append(GroomScenario(tuple(path.nodes[i] for i in cuts), cuts, lengths, min(avail), max(lengths)))
    return scenarios


def select_scenario(scenarios: Sequence[GroomScenario], demand: float, capacity: float) -> GroomScenario | None:
    """Smallest MSPL among scenarios whose MATC covers ``demand``; ties prefer larger MATC."""
    fit = [s for s in scenarios if s.matc >= demand - _REL_TOL * capacity]
    if not fit:
        return None
    return min(fit, key=lambda s: (s.mspl, -s.matc, s.cuts))


def commit_scenario(state: TransponderState, path: Path, scenario: GroomScenario, request_id: Hashable,
                    demand: float, *, reuse: bool = True) -> list[OpenLightpath]:
    used = []
    for i, j in zip(scenario.cuts, scenario.cuts[1:]):
        u, w = path.nodes[i], path.nodes[j]
        lp = state.best_fit(u, w, demand) if reuse else None
        if lp is None:
            if not scenario.direct:
                raise CapacityExceededError(f"segment {u!r}->{w!r} lost its spare capacity")
            lp = state.open(path.subpath(i, j))
        lp.flows[request_id] = lp.flows.get(request_id, 0.0) + demand
        used.append(lp)
    return used


def run_rgo(requests: Sequence[TrafficRequest], net: NetworkModel, limits: TransponderLimits, *,
            grooming: bool = True, state: TransponderState | None = None) -> RgoSolution:
    """Single pass of the routing/grooming/ordering heuristic.

    With ``grooming=False`` every remainder gets its own fresh transponder
    pair on its shortest path (the no-grooming baseline). ``state`` may carry
    preloaded lightpaths.
    """
    cap = limits.capacity
    state = state or TransponderState(net, cap)
    sp_cache: dict[tuple, Path] = {}

    def sp(q: TrafficRequest) -> Path:
        key = (q.source, q.destination)
        if key not in sp_cache:
            sp_cache[key] = shortest_path(net, *key)
        return sp_cache[key]

    remainders = []
    for index, piece in enumerate(partition_traffic(requests, limits)):
        if piece.full:
            state.open(sp(piece.request), {piece.request.id: piece.rate})
        else:
            remainders.append((index, piece))
    remainders.sort(key=lambda item: (-item[1].rate * sp(item[1].request).length_km, item[0]))

    for _index, piece in remainders:
        q = piece.request
        path = sp(q)
        if grooming:
            chosen = select_scenario(enumerate_groom_scenarios(path, state), piece.rate, cap)
        else:
            chosen = None
            if state.can_open(q.source, q.destination):
                chosen = GroomScenario((q.source, q.destination), (0, path.hops), (path.length_km,), cap,
                                       path.length_km)
        if chosen is None:
            raise CapacityExceededError(f"no transponder capacity left for request {q.id!r}")
        commit_scenario(state, path, chosen, q.id, piece.rate, reuse=grooming)

    return RgoSolution.from_lightpaths([lp.freeze() for lp in state.lightpaths], net, cap)


# ------------------------------------------------------------- ILP checker
@dataclass(frozen=True)
class Violation:
    constraint: str
    detail: str


@dataclass(frozen=True)
class IlpReport:
    feasible: bool
    violations: tuple[Violation, ...]
    objective: float


def ilp_objective(sol: RgoSolution, net: NetworkModel, limits: TransponderLimits, weights: RgoWeights) -> float:
    """Route length + pairing penalty + idle capacity of the active transmit transponders."""
    lengths = math.fsum(net.link_by_id[l].length_km for _tx, l in sol.activations if l in net.link_by_id)
    loads: dict = {}
    for (tx, _q), rate in sol.add_flows.items():
        loads[tx] = loads.get(tx, 0.0) + rate
    active = {tx for tx, _l in sol.activations} | set(loads)
    idle = math.fsum(limits.capacity - loads.get(tx, 0.0) for tx in active)
    return lengths + weights.hop_penalty * len(sol.pairings) + weights.idle_penalty * idle


def ilp_check(sol: RgoSolution, requests: Sequence[TrafficRequest], net: NetworkModel,
              limits: TransponderLimits, weights: RgoWeights = RgoWeights()) -> IlpReport:
    """Evaluate every constraint of the routing/grooming ILP on ``sol``."""
    cap = limits.capacity
    tol = _REL_TOL * cap
    bad: list[Violation] = []

    f_node: dict = {}
    c_node: dict = {}
    f_tx: dict = {}
    c_rx: dict = {}
    for (tx, q), rate in sol.add_flows.items():
        f_node[(tx[0], q)] = f_node.get((tx[0], q), 0.0) + rate
        f_tx[tx] = f_tx.get(tx, 0.0) + rate
        if rate < -tol:
            bad.append(Violation("flow_sign", f"negative add flow at {tx} for {q!r}"))
    for (rx, q), rate in sol.drop_flows.items():
        c_node[(rx[0], q)] = c_node.get((rx[0], q), 0.0) + rate
        c_rx[rx] = c_rx.get(rx, 0.0) + rate
        if rate < -tol:
            bad.append(Violation("flow_sign", f"negative drop flow at {rx} for {q!r}"))

    # KCL per node and request
    known_requests = {q.id for q in requests}
    for q in requests:
        for v in net.nodes:
            lhs = f_node.get((v, q.id), 0.0) + (q.rate if v == q.destination else 0.0)
            rhs = c_node.get((v, q.id), 0.0) + (q.rate if v == q.source else 0.0)
            if abs(lhs - rhs) > tol:
                bad.append(Violation("kcl", f"node {v!r}, request {q.id!r}: {lhs:.6g} != {rhs:.6g}"))
    for (_tx, q) in list(sol.add_flows) + list(sol.drop_flows):
        if q not in known_requests:
            bad.append(Violation("kcl", f"flow for unknown request {q!r}"))

    for tx, load in f_tx.items():
        if load > cap + tol:
            bad.append(Violation("tx_capacity", f"{tx} carries {load:.6g} > {cap:.6g}"))
    for rx, load in c_rx.items():
        if load > cap + tol:
            bad.append(Violation("rx_capacity", f"{rx} carries {load:.6g} > {cap:.6g}"))

    bank = net.transponders_per_node
    for t in set(sol.routes) | {p[0] for p in sol.pairings} | {p[1] for p in sol.pairings}:
        if not (1 <= t[1] <= bank) or t[0] not in net.out_links:
            bad.append(Violation("bank", f"transponder {t} outside the node bank"))

    # paired transponders carry identical per-request flows
    requests_of: dict = {}
    for (t, q) in list(sol.add_flows) + list(sol.drop_flows):
        requests_of.setdefault(t, set()).add(q)
    for tx, rx in sol.pairings:
        for q in requests_of.get(tx, set()) | requests_of.get(rx, set()):
            if abs(sol.drop_flows.get((rx, q), 0.0) - sol.add_flows.get((tx, q), 0.0)) > tol:
                bad.append(Violation("pairing", f"{tx}->{rx} disagree on request {q!r}"))

    # no flow without a route leaving the transponder's node
    out_count: dict = {}
    in_count: dict = {}
    for tx, l in sol.activations:
        link = net.link_by_id.get(l)
        if link is None:
            bad.append(Violation("route", f"{tx} uses unknown link {l!r}"))
            continue
        out_count[(tx, link.begin)] = out_count.get((tx, link.begin), 0) + 1
        in_count[(tx, link.end)] = in_count.get((tx, link.end), 0) + 1
    for tx, load in f_tx.items():
        if load > tol and out_count.get((tx, tx[0]), 0) == 0:
            bad.append(Violation("route", f"{tx} carries traffic but has no outgoing link"))

    # optical switching: arriving light is either dropped or forwarded, once
    pair_count: dict = {}
    for tx, rx in sol.pairings:
        pair_count[(tx, rx[0])] = pair_count.get((tx, rx[0]), 0) + 1
    txs = {tx for tx, _l in sol.activations} | {tx for tx, _rx in sol.pairings}
    for tx in txs:
        for v in net.nodes:
            incoming = in_count.get((tx, v), 0)
            onward = out_count.get((tx, v), 0) + pair_count.get((tx, v), 0)
            if not incoming <= onward <= 1:
                bad.append(Violation("switching", f"{tx} at node {v!r}: in={incoming}, out+drop={onward}"))

    return IlpReport(not bad, tuple(bad), ilp_objective(sol, net, limits, weights))
