import math
from dataclasses import replace

import mpmath
import pytest
from hypothesis import given, strategies as st

from eonalloc import model
from eonalloc.model import (Link, NetworkModel, ParameterDomainError, PhysParams, PowerParams, RoundingParams,
                            TopologyError, TrafficRequest, TransponderLimits, derive_constants, reference_phys)

mpmath.mp.dps = 40


def test_db_per_km_ingestion():
    assert model.db_per_km_to_per_m(0.22) == pytest.approx(5.066e-5, rel=1e-3)
    assert model.per_m_to_db_per_km(model.db_per_km_to_per_m(0.22)) == pytest.approx(0.22, rel=1e-14)


def _mp_constants(phys):
    a, L = mpmath.mpf(phys.alpha), mpmath.mpf(phys.span_length_km) * 1000
    g = mpmath.mpf(phys.gamma) / 1000
    b2 = mpmath.mpf(phys.beta2_abs)
    ase = (mpmath.e ** (a * L) - 1) * mpmath.mpf(phys.planck) * mpmath.mpf(phys.nu) * mpmath.mpf(phys.nsp)
    nli = 3 * g ** 2 / (2 * a * mpmath.pi * b2)
    bw = mpmath.pi ** 2 * b2 / (2 * a)
    return float(ase), float(nli), float(bw)


def test_derived_constants_reference_values():
    k = derive_constants(reference_phys(1.0))
    # frozen from a 40-digit recomputation of the same formulas
    assert k.ase_psd == pytest.approx(1.1458e-17, rel=1e-4)
    assert k.nli_coefficient == pytest.approx(7.811e23, rel=1e-4)
    assert k.nli_bandwidth == pytest.approx(1.9866e-21, rel=1e-4)
    assert k.xci_weight == 0.4343
    assert math.expm1(reference_phys(1.0).alpha * 80e3) == pytest.approx(56.6, rel=2e-3)


def test_derived_constants_match_high_precision():
    phys = reference_phys(12.5)
    k = derive_constants(phys)
    ase, nli, bw = _mp_constants(phys)
    assert k.ase_psd == pytest.approx(ase, rel=1e-13)
    assert k.nli_coefficient == pytest.approx(nli, rel=1e-13)
    assert k.nli_bandwidth == pytest.approx(bw, rel=1e-13)


def test_zero_gamma_rejected():
    with pytest.raises(ParameterDomainError):
        PhysParams(alpha=5e-5, beta2_abs=2e-26, gamma=0.0, nu=1.9e14, nsp=1.58, span_length_km=80,
                   subcarrier_spacing=1e9, guard_band=2e10)


def test_doubling_gamma_quadruples_nli_coefficient():
    phys = reference_phys(1.0)
    twice = derive_constants(replace(phys, gamma=2 * phys.gamma))
    assert twice.nli_coefficient == 4 * derive_constants(phys).nli_coefficient


def test_derive_constants_deterministic():
    a, b = derive_constants(reference_phys(5.0)), derive_constants(reference_phys(5.0))
    assert a == b


positive = st.floats(min_value=1e-3, max_value=1e3, allow_nan=False)


@given(alpha=st.floats(1e-6, 1e-4), beta=st.floats(1e-27, 1e-25), gamma=positive, nu=st.floats(1e14, 3e14),
       nsp=st.floats(1.0, 3.0), span=st.floats(10, 120), spacing=st.floats(1e8, 5e10), guard=st.floats(1e9, 5e10))
def test_phys_round_trip(alpha, beta, gamma, nu, nsp, span, spacing, guard):
    phys = PhysParams(alpha, beta, gamma, nu, nsp, span, spacing, guard)
    cfg = model.phys_to_config(phys)
    assert model.phys_to_config(model.phys_from_config(cfg)) == cfg
    assert model.phys_from_config(cfg) == phys


@given(vals=st.lists(st.floats(0, 100, allow_nan=False), min_size=8, max_size=8))
def test_power_round_trip(vals):
    pw = PowerParams(*vals)
    cfg = model.power_to_config(pw)
    assert model.power_to_config(model.power_from_config(cfg)) == cfg


@given(cap=st.floats(1e9, 1e12), levels=st.sets(st.integers(1, 6), min_size=1),
       rates=st.sets(st.sampled_from(model.TABLE_CODING_RATES), min_size=1), bmax=st.floats(1, 16))
def test_limits_round_trip(cap, levels, rates, bmax):
    lim = TransponderLimits(cap, tuple(levels), tuple(rates), bmax)
    cfg = model.limits_to_config(lim)
    assert model.limits_from_config(cfg) == lim
    assert model.limits_to_config(model.limits_from_config(cfg)) == cfg


def test_rounding_round_trip_and_domain():
    rp = RoundingParams(0.0, 0.1)
    assert model.rounding_from_config(model.rounding_to_config(rp)) == rp
    with pytest.raises(ParameterDomainError):
        RoundingParams(0.0, 0.0)


def test_table_unit_parsing():
    cfg = {"alpha_db_per_km": 0.22, "beta2_fs2_per_m": 20393, "gamma_per_w_km": 1.3, "nu_thz": 193.55,
           "nsp": 1.58, "span_length_km": 80, "subcarrier_spacing_ghz": 1.0, "guard_band_ghz": 20}
    assert model.phys_from_config(cfg) == reference_phys(1.0)
    assert model.limits_from_config({"capacity_gbps": 100, "coding_rates": ["2/3", "8/9"]}).coding_rates == (
        2 / 3, 8 / 9)


def test_link_and_network_invariants():
    with pytest.raises(TopologyError):
        Link("a", 1, 1, 10.0)
    with pytest.raises(ParameterDomainError):
        Link("a", 1, 2, 0.0)
    with pytest.raises(TopologyError):
        NetworkModel((1, 2), (Link("a", 1, 3, 5.0),), 4, 1e12)
    with pytest.raises(ParameterDomainError):
        NetworkModel((1, 2), (Link("a", 1, 2, 5.0),), 0, 1e12)


def test_request_invariants():
    with pytest.raises(ParameterDomainError):
        TrafficRequest("q", 1, 1, 1e9)
    with pytest.raises(ParameterDomainError):
        TrafficRequest("q", 1, 2, 0.0)


def test_limits_must_come_from_the_table():
    with pytest.raises(ParameterDomainError):
        TransponderLimits(1e11, modulation_levels=(7,))
    with pytest.raises(ParameterDomainError):
        TransponderLimits(1e11, coding_rates=(0.5,))
    with pytest.raises(ParameterDomainError):
        TransponderLimits(0.0)
