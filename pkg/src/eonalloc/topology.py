"""Graph services: shortest paths, span counts, shared spans, link occupants."""
from __future__ import annotations

import heapq
import math
from dataclasses import dataclass
from typing import TYPE_CHECKING, Hashable, Mapping, Sequence

from .model import Link, NetworkModel, Node, PhysParams, TopologyError

if TYPE_CHECKING:
    from .rgo import RgoSolution


class NoRouteError(TopologyError):
    pass


@dataclass(frozen=True)
class Path:
    """Chain of directed links; ``nodes`` has one more entry than ``links``."""

    nodes: tuple
    links: tuple[str, ...]
    link_lengths: tuple[float, ...]

    def __post_init__(self):
        if len(self.nodes) != len(self.links) + 1 or len(self.links) != len(self.link_lengths):
            raise TopologyError("inconsistent path")

    @property
    def length_km(self) -> float:
        return math.fsum(self.link_lengths)

    @property
    def hops(self) -> int:
        return len(self.links)

    @property
    def source(self) -> Node:
        return self.nodes[0]

    @property
    def destination(self) -> Node:
        return self.nodes[-1]

    def subpath(self, i: int, j: int) -> "Path":
        """Sub-path between node positions ``i`` < ``j``."""
        return Path(self.nodes[i:j + 1], self.links[i:j], self.link_lengths[i:j])

    @classmethod
    def from_links(cls, links: Sequence[Link]) -> "Path":
        if not links:
            raise TopologyError("empty path")
        for a, b in zip(links, links[1:]):
            if a.end != b.begin:
                raise TopologyError(f"links {a.id} and {b.id} do not chain")
        nodes = (links[0].begin,) + tuple(l.end for l in links)
        return cls(nodes, tuple(l.id for l in links), tuple(l.length_km for l in links))

    def to_dict(self) -> dict:
        return {"nodes": list(self.nodes), "links": list(self.links), "link_lengths_km": list(self.link_lengths)}

    @classmethod
    def from_dict(cls, data: Mapping) -> "Path":
        return cls(tuple(data["nodes"]), tuple(data["links"]), tuple(float(x) for x in data["link_lengths_km"]))


def shortest_path(net: NetworkModel, s: Node, d: Node) -> Path:
    """Minimum-length path from ``s`` to ``d``.

    Equal-length candidates are ordered lexicographically by node sequence,
    which makes the result independent of link insertion order. Labels are
    ``(length, node_sequence)`` pairs; extending two labels by the same link
    preserves their order, so plain Dijkstra stays exact under this key.
    """
    if s == d:
        raise TopologyError("source equals destination")
    if s not in net.out_links or d not in net.out_links:
        raise TopologyError(f"unknown node in ({s!r}, {d!r})")
    heap: list[tuple[float, tuple, tuple]] = [(0.0, (s,), ())]
    settled: set = set()
    while heap:
        dist, seq, links = heapq.heappop(heap)
        node = seq[-1]
        if node in settled:
            continue
        settled.add(node)
        if node == d:
            return Path.from_links([net.link_by_id[i] for i in links])
        for link in net.out_links[node]:
            if link.end in settled or link.end in seq:
                continue
            heapq.heappush(heap, (dist + link.length_km, seq + (link.end,), links + (link.id,)))
    raise NoRouteError(f"no route from {s!r} to {d!r}")


def link_spans(length_km: float, span_length_km: float) -> int:
    """Amplified spans on one link (ceiling; exact multiples are not rounded up)."""
    ratio = length_km / span_length_km
    nearest = round(ratio)
    if abs(ratio - nearest) <= 1e-9 * max(1.0, ratio):
        return max(1, int(nearest))
    return max(1, math.ceil(ratio))


def span_count(path: Path, phys: PhysParams) -> int:
    if not path.links:
        raise TopologyError("empty path has no spans")
    return sum(link_spans(length, phys.span_length_km) for length in path.link_lengths)


def shared_spans(path_a: Path, path_b: Path, phys: PhysParams) -> int:
    """Spans on the directed links common to both paths."""
    lengths = dict(zip(path_b.links, path_b.link_lengths))
    return sum(link_spans(length, phys.span_length_km)
               for link, length in zip(path_a.links, path_a.link_lengths) if link in lengths)


def shared_span_matrix(paths: Mapping[Hashable, Path], phys: PhysParams) -> dict[tuple, int]:
    """Symmetric map ``(i, j) -> shared spans``; zero entries are omitted off the diagonal."""
    keys = list(paths)
    out: dict[tuple, int] = {}
    for i, a in enumerate(keys):
        out[(a, a)] = span_count(paths[a], phys)
        for b in keys[i + 1:]:
            n = shared_spans(paths[a], paths[b], phys)
            if n:
                out[(a, b)] = out[(b, a)] = n
    return out


def link_occupants(rgo: "RgoSolution", link_id: str) -> frozenset:
    """Transmit transponders whose route uses ``link_id``."""
    if link_id not in rgo.link_ids:
        raise TopologyError(f"unknown link {link_id!r}")
    return frozenset(tx for tx, path in rgo.routes.items() if link_id in path.links)
