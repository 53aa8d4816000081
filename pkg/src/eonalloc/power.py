"""Power accounting for transponders, grooming switches and amplifiers."""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Hashable, Iterable, Mapping, Sequence

from .model import Link, NetworkModel, Node, ParameterDomainError, PhysParams, PowerParams, TrafficRequest

if TYPE_CHECKING:
    from .rgo import RgoSolution
    from .tpa import TransponderConfig

GROOMING_TOLERANCE_W = 1e-9


class PowerInconsistencyError(ValueError):
    pass


def transponder_power(b: float, r: float, pw: PowerParams) -> float:
    """Power of one linked transmit/receive pair with 2**b subcarriers and coding rate r."""
    if not r > 0 or r > 1:
        raise ParameterDomainError(f"coding rate must lie in (0, 1], got {r!r}")
    if not b > 0:
        raise ParameterDomainError(f"subcarrier exponent must be positive, got {b!r}")
    n_sub = 2.0 ** b
    fft = 2.0 * (pw.fft_point / 2.0) * n_sub * b
    return math.fsum((pw.tx_bias, pw.rx_bias, (pw.encoder + pw.decoder) / r, fft, n_sub * pw.dsp_per_subcarrier))


def transponder_breakdown(b: float, r: float, pw: PowerParams) -> dict[str, float]:
    """The terms of :func:`transponder_power` by element: bias, coding, fft, dsp."""
    total = transponder_power(b, r, pw)
    n_sub = 2.0 ** b
    parts = {"bias": pw.tx_bias + pw.rx_bias, "coding": (pw.encoder + pw.decoder) / r,
             "fft": pw.fft_point * n_sub * b, "dsp": n_sub * pw.dsp_per_subcarrier}
    assert math.isclose(math.fsum(parts.values()), total, rel_tol=1e-12)
    return parts


def grooming_power(node: Node, add_flows: Mapping[tuple, float], drop_flows: Mapping[tuple, float],
                   requests: Iterable[TrafficRequest], pw: PowerParams) -> float:
    """Switching power at ``node``.

    ``add_flows`` / ``drop_flows`` map ``((v, t), q) -> bit/s``. Traffic that
    only enters or leaves the network at this node costs nothing; what is
    switched on its way through is charged per bit.
    """
    switched = math.fsum(rate for ((v, _t), _q), rate in add_flows.items() if v == node)
    switched += math.fsum(rate for ((v, _t), _q), rate in drop_flows.items() if v == node)
    local = math.fsum(q.rate * ((q.source == node) + (q.destination == node)) for q in requests)
    watts = pw.grooming_energy * switched - pw.grooming_energy * local
    if watts < -GROOMING_TOLERANCE_W:
        raise PowerInconsistencyError(f"negative grooming power {watts:.3e} W at node {node!r}; flows violate KCL")
    return max(watts, 0.0)


def amplifier_power(link: Link, active: bool, phys: PhysParams, pw: PowerParams) -> float:
    """In-line plus booster amplifiers of an active link (length ratio used unrounded)."""
    if not active:
        return 0.0
    return pw.amplifier * (link.length_km / phys.span_length_km + 1.0)


@dataclass
class PowerReport:
    transponders: dict[str, float] = field(default_factory=dict)
    grooming: dict[str, float] = field(default_factory=dict)
    amplifiers: dict[str, float] = field(default_factory=dict)

    @property
    def transponder_total(self) -> float:
        return math.fsum(self.transponders.values())

    @property
    def grooming_total(self) -> float:
        return math.fsum(self.grooming.values())

    @property
    def amplifier_total(self) -> float:
        return math.fsum(self.amplifiers.values())

    @property
    def total(self) -> float:
        return math.fsum([*self.transponders.values(), *self.grooming.values(), *self.amplifiers.values()])

    def rows(self) -> list[tuple[str, str, float]]:
        out = [("transponder", k, v) for k, v in self.transponders.items()]
        out += [("grooming_switch", k, v) for k, v in self.grooming.items()]
        out += [("amplifiers", k, v) for k, v in self.amplifiers.items()]
        out.append(("total", "network", self.total))
        return out

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["element_type", "element_id", "watts"])
        for kind, ident, watts in self.rows():
            writer.writerow([kind, ident, repr(watts)])
        return buf.getvalue()

    def to_json(self) -> str:
        return json.dumps({"transponders": self.transponders, "grooming": self.grooming,
                           "amplifiers": self.amplifiers, "total": self.total}, indent=2)

    @classmethod
    def from_json(cls, text: str) -> "PowerReport":
        data = json.loads(text)
        return cls(dict(data["transponders"]), dict(data["grooming"]), dict(data["amplifiers"]))


def total_power(rgo: "RgoSolution", cfgs: Mapping[str, "TransponderConfig"], net: NetworkModel,
                requests: Sequence[TrafficRequest], phys: PhysParams, pw: PowerParams) -> PowerReport:
    report = PowerReport()
    for lp in rgo.lightpaths():
        cfg = cfgs.get(lp.id)
        if cfg is None:
            raise PowerInconsistencyError(f"no transponder configuration for active lightpath {lp.id}")
        report.transponders[lp.id] = transponder_power(cfg.b, cfg.r, pw)
    for v in net.nodes:
        report.grooming[str(v)] = grooming_power(v, rgo.add_flows, rgo.drop_flows, requests, pw)
    used = rgo.used_links()
    for link in net.links:
        report.amplifiers[link.id] = amplifier_power(link, link.id in used, phys, pw)
    return report
