import math

import pytest
from hypothesis import given, strategies as st

from eonalloc.model import (Link, ParameterDomainError, TrafficRequest, TransponderLimits, bidirectional,
                            reference_phys, reference_power)
from eonalloc.power import (PowerInconsistencyError, PowerReport, amplifier_power, grooming_power, total_power,
                            transponder_breakdown, transponder_power)
from eonalloc.rgo import run_rgo
from eonalloc.tpa import TransponderConfig
from conftest import request

PW = reference_power()
PHYS = reference_phys(1.0)


def test_transponder_reference_value():
    # 16 + 20 + 0.225 + 3.375 + 0.64 + 0.32
    assert transponder_power(5, 8 / 9, PW) == pytest.approx(40.56, abs=1e-9)
    parts = transponder_breakdown(5, 8 / 9, PW)
    assert parts["bias"] == 36.0
    assert parts["coding"] == pytest.approx(3.6, abs=1e-12)
    assert parts["fft"] == pytest.approx(0.64, abs=1e-12)
    assert parts["dsp"] == pytest.approx(0.32, abs=1e-12)


def test_fft_term_grows_faster_than_doubling():
    def fft(b):
        return transponder_breakdown(b, 1.0, PW)["fft"]
    for b in range(1, 12):
        assert fft(b + 1) / fft(b) == pytest.approx(2 * (b + 1) / b, rel=1e-12)
        assert fft(b + 1) > 2 * fft(b)


def test_rate_one_coding_term():
    assert transponder_breakdown(3, 1.0, PW)["coding"] == PW.encoder + PW.decoder


def test_transponder_domain():
    with pytest.raises(ParameterDomainError):
        transponder_power(3, 0.0, PW)
    with pytest.raises(ParameterDomainError):
        transponder_power(0, 0.75, PW)


@given(b=st.floats(0.1, 14), r=st.floats(0.5, 0.99), db=st.floats(1e-3, 1), dr=st.floats(1e-3, 0.01))
def test_transponder_monotone(b, r, db, dr):
    assert transponder_power(b + db, r, PW) > transponder_power(b, r, PW)
    assert transponder_power(b, r + dr, PW) < transponder_power(b, r, PW)


def test_grooming_pass_through():
    q = TrafficRequest("q", 1, 3, 100e9)
    add = {((2, 1), "q"): 100e9, ((1, 1), "q"): 100e9}
    drop = {((2, 1), "q"): 100e9, ((3, 1), "q"): 100e9}
    assert grooming_power(2, add, drop, [q], PW) == 80.0
    assert grooming_power(1, add, drop, [q], PW) == 0.0
    assert grooming_power(3, add, drop, [q], PW) == 0.0


def test_grooming_kcl_violation():
    q = TrafficRequest("q", 1, 3, 100e9)
    with pytest.raises(PowerInconsistencyError):
        grooming_power(1, {}, {}, [q], PW)


def test_amplifier_examples():
    assert amplifier_power(Link("a", 1, 2, 800), True, PHYS, PW) == 132.0
    assert amplifier_power(Link("a", 1, 2, 80), True, PHYS, PW) == 24.0
    assert amplifier_power(Link("a", 1, 2, 800), False, PHYS, PW) == 0.0


def _configs(rgo, b=3.0, r=3 / 4):
    return {lp.id: TransponderConfig(lp.id, lp.tx[0], lp.tx[1], 6.0, b, r, 1e-3, 1e11, 2 ** b * 1e9)
            for lp in rgo.lightpaths()}


def test_empty_network_costs_nothing(line_net, params):
    rgo = run_rgo([], line_net, params.limits)
    assert total_power(rgo, {}, line_net, [], PHYS, PW).total == 0.0


def test_single_lightpath_breakdown(line_net, params):
    reqs = [request("q", 1, 2, 40)]
    rgo = run_rgo(reqs, line_net, params.limits)
    rep = total_power(rgo, _configs(rgo), line_net, reqs, PHYS, PW)
    assert rep.grooming_total == 0.0
    assert rep.transponder_total == pytest.approx(transponder_power(3.0, 3 / 4, PW))
    assert rep.amplifier_total == pytest.approx(12.0 * (1500 / 80 + 1))
    assert rep.total == math.fsum(rep.transponders.values()) + math.fsum(rep.amplifiers.values())
    back = PowerReport.from_json(rep.to_json())
    assert back.total == rep.total
    assert rep.to_csv().splitlines()[-1].startswith("total,network,")


def test_missing_config_rejected(line_net, params):
    reqs = [request("q", 1, 2, 40)]
    rgo = run_rgo(reqs, line_net, params.limits)
    with pytest.raises(PowerInconsistencyError):
        total_power(rgo, {}, line_net, reqs, PHYS, PW)


def test_additive_over_disjoint_networks(params):
    left = [(1, 2, 300), (2, 3, 500)]
    right = [(4, 5, 700), (5, 6, 200)]
    ra = [request("a", 1, 3, 60), request("b", 3, 2, 30)]
    rb = [request("c", 4, 6, 120), request("d", 6, 5, 20)]

    def run(nodes, spans, reqs):
        net = bidirectional(nodes, spans, transponders_per_node=4, fiber_bandwidth=2e12)
        rgo = run_rgo(reqs, net, params.limits)
        return total_power(rgo, _configs(rgo), net, reqs, PHYS, PW).total

    whole = run([1, 2, 3, 4, 5, 6], left + right, ra + rb)
    assert whole == pytest.approx(run([1, 2, 3], left, ra) + run([4, 5, 6], right, rb), rel=1e-12)


def test_amplifiers_ignore_link_sharing(params):
    net = bidirectional([1, 2], [(1, 2, 400)], transponders_per_node=8, fiber_bandwidth=2e12)
    one = [request("a", 1, 2, 100)]
    three = one + [request("b", 1, 2, 100), request("c", 1, 2, 100)]
    amp = []
    for reqs in (one, three):
        rgo = run_rgo(reqs, net, params.limits)
        amp.append(total_power(rgo, _configs(rgo), net, reqs, PHYS, PW).amplifiers["1-2"])
    assert amp[0] == amp[1] == 12.0 * 6


@given(st.lists(st.tuples(st.sampled_from([1, 2, 3, 4]), st.sampled_from([1, 2, 3, 4]), st.integers(1, 250)),
                min_size=1, max_size=8))
def test_grooming_power_nonnegative_on_heuristic_solutions(items):
    net = bidirectional([1, 2, 3, 4], [(1, 2, 1500), (2, 3, 2000), (3, 4, 1000), (1, 4, 5000)],
                        transponders_per_node=32, fiber_bandwidth=2e12)
    reqs = [request(f"q{k}", s, d, g) for k, (s, d, g) in enumerate(items) if s != d]
    rgo = run_rgo(reqs, net, TransponderLimits(100e9))
    for v in net.nodes:
        assert grooming_power(v, rgo.add_flows, rgo.drop_flows, reqs, PW) >= 0.0
