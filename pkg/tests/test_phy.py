import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, strategies as st

from eonalloc import phy
from eonalloc.model import ParameterDomainError, derive_constants, reference_phys

PHYS = reference_phys(1.0)
K = derive_constants(PHYS)

TABLE = {  # (c, r) -> reference threshold
    (1, 2 / 3): 1.5, (2, 2 / 3): 2.3, (3, 2 / 3): 5.9, (4, 2 / 3): 9.1, (5, 2 / 3): 17.4, (6, 2 / 3): 28.8,
    (1, 3 / 4): 1.7, (2, 3 / 4): 2.9, (3, 3 / 4): 7.8, (4, 3 / 4): 12.0, (5, 3 / 4): 24.0, (6, 3 / 4): 40.7,
    (1, 8 / 9): 3.6, (2, 8 / 9): 4.6, (3, 8 / 9): 12.9, (4, 8 / 9): 20.9, (5, 8 / 9): 42.7, (6, 8 / 9): 75.8,
}


def test_table_lookup_examples():
    assert phy.theta_lookup(1, 2 / 3) == 1.5
    assert phy.theta_lookup(6, 8 / 9) == 75.8
    assert phy.theta_lookup(4, 3 / 4) == 12.0


@pytest.mark.parametrize("key", sorted(TABLE))
def test_table_lookup_all(key):
    assert phy.theta_lookup(*key) == TABLE[key]


@pytest.mark.parametrize("c, r", [(7, 2 / 3), (0, 3 / 4), (2.5, 3 / 4), (3, 0.7)])
def test_table_lookup_off_grid(c, r):
    with pytest.raises(ParameterDomainError):
        phy.theta_lookup(c, r)


def test_fit_examples():
    assert phy.theta_fit(6, 8 / 9) == pytest.approx(71.9, abs=0.05)
    assert phy.theta_fit(1, 1) == pytest.approx(1.21 ** 5.73, rel=1e-12)
    assert phy.theta_fit(1, 1) == pytest.approx(2.98, abs=0.005)
    assert abs(phy.theta_fit(6, 8 / 9) - 75.8) / 75.8 < 0.10


def test_fit_domain():
    for c, r in [(0.5, 0.8), (6.5, 0.8), (3, 0.5), (3, 1.1)]:
        with pytest.raises(ParameterDomainError):
            phy.theta_fit(c, r)
    assert phy.theta_fit(6.5, 0.8, extrapolate=True) > phy.theta_fit(6, 0.8)


@given(c=st.floats(1, 5.9), r=st.floats(0.6, 0.99), eps=st.floats(1e-3, 0.1))
def test_fit_monotone(c, r, eps):
    assert phy.theta_fit(c + eps, r) > phy.theta_fit(c, r)
    assert phy.theta_fit(c, r + eps / 10) > phy.theta_fit(c, r)


@given(c=st.floats(1, 6), r=st.floats(0.6, 1))
def test_fit_is_affine_in_logs(c, r):
    lhs = math.log(phy.theta_fit(c, r))
    rhs = phy.FIT_RATE_EXPONENT * math.log(r) + phy.FIT_LEVEL_EXPONENT * math.log(1 + phy.FIT_LEVEL_SLOPE * c)
    assert lhs == pytest.approx(rhs, rel=1e-12, abs=1e-12)


def test_fit_residual_grid_reported():
    rows = phy.theta_fit_residuals()
    assert len(rows) == 18
    worst = next(r for r in rows if r["c"] == 6 and r["r"] == 8 / 9)
    assert abs(worst["rel_error"]) < 0.10


def _ctx(powers, bws, spans, shared=None, dist=None):
    return phy.OsnrContext(powers, bws, spans, shared or {}, dist or {}, K)


def test_osnr_linear_limit():
    bw = 2 ** 5 * 1e9
    for p in (1e-9, 2e-9):
        ctx = _ctx({"a": p}, {"a": bw}, {"a": 10})
        assert phy.osnr(ctx, "a") == pytest.approx(p / (K.ase_psd * 10 * bw), rel=1e-6)


def test_osnr_equal_ase_and_self_channel():
    bw = 2 ** 4 * 1e9
    p = (K.ase_psd * bw / K.sci_coefficient) ** (1 / 3)
    ctx = _ctx({"a": p}, {"a": bw}, {"a": 7})
    assert phy.osnr(ctx, "a") == pytest.approx(p / (2 * K.ase_psd * 7 * bw), rel=1e-12)


def _osnr_mp(powers, bws, spans, shared, dist, target):
    """Independent evaluation at 50 digits straight from the fiber constants."""
    mpmath.mp.dps = 50
    a = mpmath.mpf(PHYS.alpha)
    ase = mpmath.expm1(a * PHYS.span_length_km * 1000) * mpmath.mpf(PHYS.planck) * PHYS.nu * PHYS.nsp
    g = mpmath.mpf(PHYS.gamma) / 1000
    nli = 3 * g * g / (2 * a * mpmath.pi * PHYS.beta2_abs)
    bw = mpmath.pi ** 2 * PHYS.beta2_abs / (2 * a)
    p = mpmath.mpf(powers[target])
    n = spans[target]
    xci = mpmath.fsum(mpmath.mpf(powers[j]) ** 2 * shared[(target, j)] / (mpmath.mpf(bws[j]) * dist[(target, j)])
                      for j in powers if j != target and shared.get((target, j)))
    denom = ase * n * bws[target] + mpmath.mpf("0.4343") * nli * p * xci + nli * bw * n * p ** 3
    return float(p / denom)


def test_osnr_three_lightpaths_against_independent_evaluator():
    powers = {"a": 1.2e-3, "b": 0.4e-3, "c": 2.5e-3}
    bws = {"a": 32e9, "b": 16e9, "c": 64e9}
    spans = {"a": 20, "b": 12, "c": 30}
    shared = {("a", "b"): 12, ("b", "a"): 12, ("a", "c"): 8, ("c", "a"): 8}
    dist = {("a", "b"): 60e9, ("b", "a"): 60e9, ("a", "c"): 90e9, ("c", "a"): 90e9}
    ctx = _ctx(powers, bws, spans, shared, dist)
    for t in powers:
        assert phy.osnr(ctx, t) == pytest.approx(_osnr_mp(powers, bws, spans, shared, dist, t), rel=1e-12)


def test_zero_distance_singularity():
    ctx = _ctx({"a": 1e-3, "b": 1e-3}, {"a": 1e10, "b": 1e10}, {"a": 3, "b": 3},
               {("a", "b"): 3, ("b", "a"): 3}, {("a", "b"): 0.0, ("b", "a"): 0.0})
    with pytest.raises(phy.OsnrSingularityError):
        phy.osnr(ctx, "a")


@given(pa=st.floats(1e-5, 1e-2), pb=st.floats(1e-5, 1e-2), scale=st.floats(1.01, 10),
       d=st.floats(1e10, 1e12), spans=st.integers(1, 60))
def test_osnr_monotone_in_interferer_power_and_distance(pa, pb, scale, d, spans):
    shared = {("a", "b"): spans, ("b", "a"): spans}
    base = dict(bws={"a": 8e9, "b": 8e9}, spans={"a": spans, "b": spans}, shared=shared)
    ref = phy.osnr(_ctx({"a": pa, "b": pb}, base["bws"], base["spans"], shared, {("a", "b"): d}), "a")
    louder = phy.osnr(_ctx({"a": pa, "b": pb * scale}, base["bws"], base["spans"], shared, {("a", "b"): d}), "a")
    farther = phy.osnr(_ctx({"a": pa, "b": pb}, base["bws"], base["spans"], shared, {("a", "b"): d * scale}), "a")
    assert louder < ref < farther


@given(b=st.integers(1, 10), spans=st.integers(1, 80), interferer=st.floats(0, 5e-3))
def test_osnr_unimodal_in_own_power(b, spans, interferer):
    grid = np.logspace(-7, -0.5, 400)
    powers = {"b": interferer} if interferer > 0 else {}
    vals = []
    for p in grid:
        ctx = _ctx({"a": p, **powers}, {"a": 2 ** b * 1e9, "b": 1e10}, {"a": spans, "b": spans},
                   {("a", "b"): spans}, {("a", "b"): 5e10})
        vals.append(phy.osnr(ctx, "a"))
    peak = int(np.argmax(vals))
    assert 0 < peak < len(grid) - 1
    assert np.all(np.diff(vals[: peak + 1]) > 0) and np.all(np.diff(vals[peak:]) < 0)


def test_single_channel_optimum():
    bw = 2 ** 6 * 1e9
    p = phy.optimal_single_power(K, bw)
    best = phy.max_single_osnr(K, bw, 25)
    assert phy.osnr(_ctx({"a": p}, {"a": bw}, {"a": 25}), "a") == pytest.approx(best, rel=1e-12)
    for q in (0.8 * p, 1.2 * p):
        assert phy.osnr(_ctx({"a": q}, {"a": bw}, {"a": 25}), "a") < best
