"""QoS physics: closed-form OSNR and the minimum-OSNR threshold."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Hashable, Mapping

from .model import DerivedConstants, ParameterDomainError, TABLE_CODING_RATES, TABLE_MODULATION_LEVELS

log = logging.getLogger(__name__)

# Minimum OSNR (linear ratio) for pre-FEC BER 1e-4, rows = coding rate.
THETA_TABLE: dict[tuple[int, float], float] = {}
for _rate, _row in zip(TABLE_CODING_RATES, ((1.5, 2.3, 5.9, 9.1, 17.4, 28.8),
                                             (1.7, 2.9, 7.8, 12.0, 24.0, 40.7),
                                             (3.6, 4.6, 12.9, 20.9, 42.7, 75.8))):
    for _c, _value in zip(TABLE_MODULATION_LEVELS, _row):
        THETA_TABLE[(_c, _rate)] = _value

FIT_RATE_EXPONENT = 3.37
FIT_LEVEL_SLOPE = 0.21
FIT_LEVEL_EXPONENT = 5.73
FIT_LEVEL_RANGE = (1.0, 6.0)
FIT_RATE_RANGE = (0.6, 1.0)


class OsnrSingularityError(ArithmeticError):
    pass


def table_rate(r: float) -> float:
    for rate in TABLE_CODING_RATES:
        if math.isclose(r, rate, rel_tol=0, abs_tol=1e-9):
            return rate
    raise ParameterDomainError(f"coding rate {r!r} is not a table value")


def theta_lookup(c: int, r: float) -> float:
    """Exact table threshold for a discrete (modulation level, coding rate)."""
    if isinstance(c, float):
        if not c.is_integer():
            raise ParameterDomainError(f"modulation level {c!r} is not an integer")
        c = int(c)
    if c not in TABLE_MODULATION_LEVELS:
        raise ParameterDomainError(f"modulation level {c!r} is not a table value")
    return THETA_TABLE[(c, table_rate(r))]


def theta_fit(c: float, r: float, *, extrapolate: bool = False) -> float:
    """Posynomial approximation r^k2 (1 + k3 c)^k4 of the threshold table.

    Outside 1 <= c <= 6, 0.6 <= r <= 1 a :class:`ParameterDomainError` is
    raised unless ``extrapolate`` is set (solver iterates may stray briefly).
    """
    inside = FIT_LEVEL_RANGE[0] <= c <= FIT_LEVEL_RANGE[1] and FIT_RATE_RANGE[0] <= r <= FIT_RATE_RANGE[1]
    if not inside:
        if not extrapolate or c <= -1 / FIT_LEVEL_SLOPE or r <= 0:
            raise ParameterDomainError(f"theta_fit outside its domain: c={c!r}, r={r!r}")
        log.debug("theta_fit extrapolating at c=%g r=%g", c, r)
    return r ** FIT_RATE_EXPONENT * (1.0 + FIT_LEVEL_SLOPE * c) ** FIT_LEVEL_EXPONENT


def theta_fit_residuals() -> list[dict]:
    """Table vs fit on the full grid, one row per entry."""
    rows = []
    for (c, r), value in sorted(THETA_TABLE.items()):
        fit = theta_fit(c, r)
        rows.append({"c": c, "r": r, "table": value, "fit": fit, "rel_error": (fit - value) / value})
    return rows


@dataclass(frozen=True)
class OsnrContext:
    """Per-lightpath launch power (W), bandwidth (Hz) and span count, plus pairwise data.

    ``shared_spans`` and ``distance`` are keyed by ordered pairs; callers
    usually provide both orders. Pairs missing from ``shared_spans`` do not
    interfere.
    """

    power: Mapping[Hashable, float]
    bandwidth: Mapping[Hashable, float]
    spans: Mapping[Hashable, int]
    shared_spans: Mapping[tuple, int]
    distance: Mapping[tuple, float]
    constants: DerivedConstants

    def __post_init__(self):
        for key in self.power:
            if not self.power[key] > 0 or not self.bandwidth[key] > 0:
                raise ParameterDomainError(f"lightpath {key!r}: power and bandwidth must be positive")


def noise_terms(ctx: OsnrContext, target: Hashable) -> tuple[float, float, float]:
    """(ASE, cross-channel, self-channel) noise powers in W for ``target``."""
    k = ctx.constants
    p = ctx.power[target]
    n = ctx.spans[target]
    ase = k.ase_psd * n * ctx.bandwidth[target]
    sci = k.sci_coefficient * n * p ** 3
    parts = []
    for other in ctx.power:
        if other == target:
            continue
        shared = ctx.shared_spans.get((target, other), 0)
        if not shared:
            continue
        d = ctx.distance.get((target, other))
        if d is None or not d > 0:
            raise OsnrSingularityError(f"zero carrier distance between {target!r} and {other!r} with shared spans")
        parts.append(ctx.power[other] ** 2 * shared / (ctx.bandwidth[other] * d))
    xci = k.xci_weight * k.nli_coefficient * p * math.fsum(parts)
    return ase, xci, sci


def osnr(ctx: OsnrContext, target: Hashable) -> float:
    ase, xci, sci = noise_terms(ctx, target)
    return ctx.power[target] / math.fsum((ase, xci, sci))


def optimal_single_power(constants: DerivedConstants, bandwidth: float) -> float:
    """Launch power maximising OSNR when no other channel interferes."""
    return (constants.ase_psd * bandwidth / (2.0 * constants.sci_coefficient)) ** (1.0 / 3.0)


def max_single_osnr(constants: DerivedConstants, bandwidth: float, spans: int) -> float:
    """Upper bound on OSNR over all launch powers, ignoring cross-channel noise."""
    p = optimal_single_power(constants, bandwidth)
    return p / (1.5 * constants.ase_psd * spans * bandwidth)
