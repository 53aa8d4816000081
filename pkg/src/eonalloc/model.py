"""Domain records and constant-parameter sets shared by every stage.

All records are frozen dataclasses. Physical quantities are stored in SI
units unless the field name says otherwise; the human-friendly units used in
configuration files (dB/km, fs^2/m, GHz, mW, pJ/bit, ...) are converted once
by the ``*_from_config`` helpers.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, fields
from fractions import Fraction
from functools import cached_property
from typing import Hashable, Iterable, Mapping, Sequence

from scipy.constants import h as PLANCK

Node = Hashable

# 10*log10(e): dB <-> neper-per-length conversion for attenuation
DB_PER_NEPER = 10.0 * math.log10(math.e)
XCI_WEIGHT = 0.4343

# modulation and coding axes of the threshold table
TABLE_MODULATION_LEVELS = (1, 2, 3, 4, 5, 6)
TABLE_CODING_RATES = (2 / 3, 3 / 4, 8 / 9)


class ParameterDomainError(ValueError):
    """A parameter lies outside its physical domain."""


class TopologyError(ValueError):
    pass


def _require_positive(owner: str, **values: float) -> None:
    for name, value in values.items():
        if not (isinstance(value, (int, float)) and math.isfinite(value) and value > 0):
            raise ParameterDomainError(f"{owner}.{name} must be a finite positive number, got {value!r}")


@dataclass(frozen=True)
class Link:
    """Directed fiber from ``begin`` to ``end``."""

    id: str
    begin: Node
    end: Node
    length_km: float

    def __post_init__(self):
        if self.begin == self.end:
            raise TopologyError(f"link {self.id} is a self loop at {self.begin!r}")
        _require_positive(f"Link[{self.id}]", length_km=self.length_km)


@dataclass(frozen=True)
class NetworkModel:
    nodes: tuple
    links: tuple[Link, ...]
    transponders_per_node: int
    fiber_bandwidth: float  # Hz

    def __post_init__(self):
        object.__setattr__(self, "nodes", tuple(self.nodes))
        object.__setattr__(self, "links", tuple(self.links))
        if len(set(self.nodes)) != len(self.nodes):
            raise TopologyError("duplicate node ids")
        known = set(self.nodes)
        ids = set()
        for link in self.links:
            if link.begin not in known or link.end not in known:
                raise TopologyError(f"link {link.id} references an unknown node")
            if link.id in ids:
                raise TopologyError(f"duplicate link id {link.id}")
            ids.add(link.id)
        if not isinstance(self.transponders_per_node, int) or self.transponders_per_node < 1:
            raise ParameterDomainError("transponders_per_node must be a positive integer")
        _require_positive("NetworkModel", fiber_bandwidth=self.fiber_bandwidth)

    @cached_property
    def link_by_id(self) -> dict[str, Link]:
        return {link.id: link for link in self.links}

    @cached_property
    def out_links(self) -> dict[Node, tuple[Link, ...]]:
        out: dict[Node, list[Link]] = {v: [] for v in self.nodes}
        for link in self.links:
            out[link.begin].append(link)
        return {v: tuple(ls) for v, ls in out.items()}

    @cached_property
    def in_links(self) -> dict[Node, tuple[Link, ...]]:
        inc: dict[Node, list[Link]] = {v: [] for v in self.nodes}
        for link in self.links:
            inc[link.end].append(link)
        return {v: tuple(ls) for v, ls in inc.items()}

    def scaled(self, factor: float) -> "NetworkModel":
        links = tuple(Link(l.id, l.begin, l.end, l.length_km * factor) for l in self.links)
        return NetworkModel(self.nodes, links, self.transponders_per_node, self.fiber_bandwidth)


def bidirectional(nodes: Iterable[Node], spans: Iterable[tuple[Node, Node, float]], *,
                  transponders_per_node: int, fiber_bandwidth: float) -> NetworkModel:
    """Network with one directed link per direction for every ``(u, v, km)`` entry."""
    links = []
    for u, v, km in spans:
        links.append(Link(f"{u}-{v}", u, v, float(km)))
        links.append(Link(f"{v}-{u}", v, u, float(km)))
    return NetworkModel(tuple(nodes), tuple(links), transponders_per_node, fiber_bandwidth)


@dataclass(frozen=True)
class TrafficRequest:
    id: Hashable
    source: Node
    destination: Node
    rate: float  # bit/s

    def __post_init__(self):
        if self.source == self.destination:
            raise ParameterDomainError(f"request {self.id}: source equals destination")
        _require_positive(f"TrafficRequest[{self.id}]", rate=self.rate)


@dataclass(frozen=True)
class PhysParams:
    """Fiber and amplifier constants.

    Units: ``alpha`` 1/m (linear power attenuation), ``beta2_abs`` s^2/m,
    ``gamma`` 1/(W km), ``nu`` Hz, ``span_length_km`` km,
    ``subcarrier_spacing`` and ``guard_band`` Hz. The subcarrier spacing has
    no default on purpose.
    """

    alpha: float
    beta2_abs: float
    gamma: float
    nu: float
    nsp: float
    span_length_km: float
    subcarrier_spacing: float
    guard_band: float
    planck: float = PLANCK

    def __post_init__(self):
        _require_positive("PhysParams", **{f.name: getattr(self, f.name) for f in fields(self)})

    @classmethod
    def from_table_units(cls, *, alpha_db_per_km: float, beta2_fs2_per_m: float, gamma_per_w_km: float,
                         nu_thz: float, nsp: float, span_length_km: float, subcarrier_spacing_ghz: float,
                         guard_band_ghz: float) -> "PhysParams":
        return cls(
            alpha=db_per_km_to_per_m(alpha_db_per_km),
            beta2_abs=beta2_fs2_per_m * 1e-30,
            gamma=gamma_per_w_km,
            nu=nu_thz * 1e12,
            nsp=nsp,
            span_length_km=span_length_km,
            subcarrier_spacing=subcarrier_spacing_ghz * 1e9,
            guard_band=guard_band_ghz * 1e9,
        )

    @cached_property
    def derived(self) -> "DerivedConstants":
        return derive_constants(self)


def db_per_km_to_per_m(value: float) -> float:
    return value / DB_PER_NEPER / 1e3


def per_m_to_db_per_km(value: float) -> float:
    return value * 1e3 * DB_PER_NEPER


@dataclass(frozen=True)
class DerivedConstants:
    ase_psd: float            # W/Hz per span
    nli_coefficient: float    # Hz^2/W^2
    nli_bandwidth: float      # s^2
    xci_weight: float = XCI_WEIGHT

    @property
    def sci_coefficient(self) -> float:
        """Self-channel term coefficient per span, 1/W^2."""
        return self.nli_coefficient * self.nli_bandwidth


def derive_constants(phys: PhysParams) -> DerivedConstants:
    if not isinstance(phys, PhysParams):
        raise TypeError("derive_constants expects PhysParams")
    for f in fields(phys):
        _require_positive("PhysParams", **{f.name: getattr(phys, f.name)})
    alpha = phys.alpha
    gamma = phys.gamma * 1e-3  # 1/(W m)
    span_m = phys.span_length_km * 1e3
    ase = math.expm1(alpha * span_m) * phys.planck * phys.nu * phys.nsp
    nli = 3.0 * gamma * gamma / (2.0 * alpha * math.pi * phys.beta2_abs)
    bw = math.pi ** 2 * phys.beta2_abs / (2.0 * alpha)
    return DerivedConstants(ase, nli, bw)


@dataclass(frozen=True)
class PowerParams:
    """Power model constants (W unless noted)."""

    tx_bias: float
    rx_bias: float
    encoder: float
    decoder: float
    fft_point: float           # W per two-point FFT
    dsp_per_subcarrier: float  # W per subcarrier
    grooming_energy: float     # J/bit
    amplifier: float

    def __post_init__(self):
        for f in fields(self):
            value = getattr(self, f.name)
            if not (math.isfinite(value) and value >= 0):
                raise ParameterDomainError(f"PowerParams.{f.name} must be nonnegative, got {value!r}")


@dataclass(frozen=True)
class TransponderLimits:
    capacity: float  # bit/s
    modulation_levels: tuple[int, ...] = TABLE_MODULATION_LEVELS
    coding_rates: tuple[float, ...] = TABLE_CODING_RATES
    max_subcarrier_exponent: float = 12.0

    def __post_init__(self):
        _require_positive("TransponderLimits", capacity=self.capacity,
                          max_subcarrier_exponent=self.max_subcarrier_exponent)
        levels = tuple(sorted(set(int(c) for c in self.modulation_levels)))
        rates = tuple(sorted(set(float(r) for r in self.coding_rates)))
        if not levels or not set(levels) <= set(TABLE_MODULATION_LEVELS):
            raise ParameterDomainError(f"modulation levels must be a nonempty subset of {TABLE_MODULATION_LEVELS}")
        if not rates or any(not any(math.isclose(r, t, abs_tol=1e-12) for t in TABLE_CODING_RATES) for r in rates):
            raise ParameterDomainError("coding rates must be a nonempty subset of {2/3, 3/4, 8/9}")
        object.__setattr__(self, "modulation_levels", levels)
        object.__setattr__(self, "coding_rates", rates)

    def with_levels(self, levels: Sequence[int]) -> "TransponderLimits":
        return TransponderLimits(self.capacity, tuple(levels), self.coding_rates, self.max_subcarrier_exponent)

    def with_capacity(self, capacity: float) -> "TransponderLimits":
        return TransponderLimits(capacity, self.modulation_levels, self.coding_rates, self.max_subcarrier_exponent)


@dataclass(frozen=True)
class RoundingParams:
    initial_precision: float = 0.0
    precision_step: float = 0.1

    def __post_init__(self):
        _require_positive("RoundingParams", precision_step=self.precision_step)
        if self.initial_precision < 0:
            raise ParameterDomainError("initial_precision must be nonnegative")


@dataclass(frozen=True)
class RgoWeights:
    """Penalty weights of the routing/grooming objective.

    ``hop_penalty`` is in km per transmit/receive pairing and
    ``idle_penalty`` in km per unused bit/s of an active transponder.
    """

    hop_penalty: float = 1.0
    idle_penalty: float = 1e-9


@dataclass(frozen=True)
class Params:
    phys: PhysParams
    power: PowerParams
    limits: TransponderLimits
    rounding: RoundingParams = field(default_factory=RoundingParams)

    @property
    def constants(self) -> DerivedConstants:
        return self.phys.derived


def reference_phys(subcarrier_spacing_ghz: float) -> PhysParams:
    """Fiber constants of the reference setup; the subcarrier spacing must be supplied."""
    return PhysParams.from_table_units(alpha_db_per_km=0.22, beta2_fs2_per_m=20393, gamma_per_w_km=1.3,
                                       nu_thz=193.55, nsp=1.58, span_length_km=80,
                                       subcarrier_spacing_ghz=subcarrier_spacing_ghz, guard_band_ghz=20)


def reference_power() -> PowerParams:
    return PowerParams(tx_bias=16.0, rx_bias=20.0, encoder=0.2, decoder=3.0, fft_point=4e-3,
                       dsp_per_subcarrier=10e-3, grooming_energy=400e-12, amplifier=12.0)


REFERENCE_BANDWIDTH = 2e12
REFERENCE_PRECISION_STEP = 0.1


# ---------------------------------------------------------------- config I/O
#
# Serialisation writes SI keys (suffix ``_hz``, ``_per_m``, ...) so that
# serialize -> parse -> serialize is the identity; parsing also accepts the
# table units used in hand-written files.

def _pick(section: Mapping, owner: str, options: Sequence[tuple[str, float]]) -> float:
    for key, scale in options:
        if key in section:
            value = section[key]
            return scale(float(value)) if callable(scale) else float(value) * scale
    raise ParameterDomainError(f"{owner}: missing one of {[k for k, _ in options]}")


def _rate(value) -> float:
    if isinstance(value, str):
        return float(Fraction(value.strip()))
    return float(value)


def phys_from_config(section: Mapping) -> PhysParams:
    return PhysParams(
        alpha=_pick(section, "phys", [("alpha_per_m", 1.0), ("alpha_db_per_km", db_per_km_to_per_m)]),
        beta2_abs=_pick(section, "phys", [("beta2_abs_s2_per_m", 1.0), ("beta2_fs2_per_m", 1e-30)]),
        gamma=_pick(section, "phys", [("gamma_per_w_km", 1.0)]),
        nu=_pick(section, "phys", [("nu_hz", 1.0), ("nu_thz", 1e12)]),
        nsp=_pick(section, "phys", [("nsp", 1.0)]),
        span_length_km=_pick(section, "phys", [("span_length_km", 1.0)]),
        subcarrier_spacing=_pick(section, "phys", [("subcarrier_spacing_hz", 1.0), ("subcarrier_spacing_ghz", 1e9)]),
        guard_band=_pick(section, "phys", [("guard_band_hz", 1.0), ("guard_band_ghz", 1e9)]),
        planck=float(section.get("planck", PLANCK)),
    )


def phys_to_config(phys: PhysParams) -> dict:
    return {
        "alpha_per_m": phys.alpha,
        "beta2_abs_s2_per_m": phys.beta2_abs,
        "gamma_per_w_km": phys.gamma,
        "nu_hz": phys.nu,
        "nsp": phys.nsp,
        "span_length_km": phys.span_length_km,
        "subcarrier_spacing_hz": phys.subcarrier_spacing,
        "guard_band_hz": phys.guard_band,
        "planck": phys.planck,
    }


def power_from_config(section: Mapping) -> PowerParams:
    return PowerParams(
        tx_bias=_pick(section, "power", [("tx_bias_w", 1.0)]),
        rx_bias=_pick(section, "power", [("rx_bias_w", 1.0)]),
        encoder=_pick(section, "power", [("encoder_w", 1.0)]),
        decoder=_pick(section, "power", [("decoder_w", 1.0)]),
        fft_point=_pick(section, "power", [("fft_point_w", 1.0), ("fft_point_mw", 1e-3)]),
        dsp_per_subcarrier=_pick(section, "power", [("dsp_per_subcarrier_w", 1.0), ("dsp_per_subcarrier_mw", 1e-3)]),
        grooming_energy=_pick(section, "power", [("grooming_j_per_bit", 1.0), ("grooming_pj_per_bit", 1e-12)]),
        amplifier=_pick(section, "power", [("amplifier_w", 1.0)]),
    )


def power_to_config(power: PowerParams) -> dict:
    return {
        "tx_bias_w": power.tx_bias,
        "rx_bias_w": power.rx_bias,
        "encoder_w": power.encoder,
        "decoder_w": power.decoder,
        "fft_point_w": power.fft_point,
        "dsp_per_subcarrier_w": power.dsp_per_subcarrier,
        "grooming_j_per_bit": power.grooming_energy,
        "amplifier_w": power.amplifier,
    }


def limits_from_config(section: Mapping) -> TransponderLimits:
    kwargs = {}
    if "modulation_levels" in section:
        kwargs["modulation_levels"] = tuple(int(c) for c in section["modulation_levels"])
    if "coding_rates" in section:
        kwargs["coding_rates"] = tuple(_rate(r) for r in section["coding_rates"])
    if "max_subcarrier_exponent" in section:
        kwargs["max_subcarrier_exponent"] = float(section["max_subcarrier_exponent"])
    capacity = _pick(section, "limits", [("capacity_bps", 1.0), ("capacity_gbps", 1e9)])
    return TransponderLimits(capacity=capacity, **kwargs)


def limits_to_config(limits: TransponderLimits) -> dict:
    return {
        "capacity_bps": limits.capacity,
        "modulation_levels": list(limits.modulation_levels),
        "coding_rates": list(limits.coding_rates),
        "max_subcarrier_exponent": limits.max_subcarrier_exponent,
    }


def rounding_from_config(section: Mapping | None) -> RoundingParams:
    section = section or {}
    return RoundingParams(initial_precision=float(section.get("initial_precision", 0.0)),
                          precision_step=float(section.get("precision_step", REFERENCE_PRECISION_STEP)))


def rounding_to_config(rounding: RoundingParams) -> dict:
    return {"initial_precision": rounding.initial_precision, "precision_step": rounding.precision_step}
