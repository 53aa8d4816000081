import numpy as np
import pytest

from eonalloc.model import RgoWeights, bidirectional
from eonalloc.oracle import (COMPARISON_COLUMNS, OracleBudgetExceeded, compare_instance, random_tiny_instance,
                             rgo_exact, tpa_exact)
from eonalloc.power import transponder_power
from eonalloc.rgo import ilp_objective, run_rgo
from eonalloc.tpa import run_tpa
from conftest import request

B = 2e12


def _pair(length_km):
    return bidirectional([1, 2], [(1, 2, length_km)], transponders_per_node=2, fiber_bandwidth=B)


def test_rgo_exact_single_demand(params, line_net):
    # one lightpath on the 4500 km route, one pairing, 50 Gb/s idle
    res = rgo_exact([request("a", 1, 4, 50)], line_net, params.limits)
    assert res.objective == 4500 + 1 + 50


def test_rgo_exact_prefers_relay(params, line_net):
    reqs = [request("a", 1, 4, 50), request("b", 1, 3, 50), request("c", 3, 4, 50)]
    exact = rgo_exact(reqs, line_net, params.limits)
    # full lightpaths 1->3 and 3->4 carry everything: 4500 km, two pairings, no idle capacity
    assert exact.objective == 4502
    assert exact.lightpaths == {(1, 3): 1, (3, 4): 1}
    heuristic = ilp_objective(run_rgo(reqs, line_net, params.limits), line_net, params.limits, RgoWeights())
    assert heuristic == 9153 >= exact.objective


def test_rgo_exact_budget(params):
    net = bidirectional(range(5), [(k, k + 1, 100) for k in range(4)], transponders_per_node=2, fiber_bandwidth=B)
    with pytest.raises(OracleBudgetExceeded):
        rgo_exact([request("a", 0, 4, 10)], net, params.limits)


def test_tpa_exact_single_full_lightpath(params):
    # 100 Gb/s at 1 GHz spacing: b = 4 with r = 8/9 needs c >= 3.52, so c = 4
    sol = run_rgo([request("q", 1, 2, 100)], _pair(400), params.limits)
    ex = tpa_exact(sol, params, B)
    assert ex.feasible
    assert ex.assignment == {"1/1": (4.0, 8 / 9, 4)}
    assert ex.objective == pytest.approx(transponder_power(4, 8 / 9, params.power), rel=1e-12)


def test_tpa_exact_two_lightpaths(params):
    # b = 3 carries 60 Gb/s at c = 5 and 80 Gb/s at c = 6
    sol = run_rgo([request("q", 1, 2, 60), request("u", 1, 2, 80)], _pair(400), params.limits)
    ex = tpa_exact(sol, params, B)
    assert sorted(ex.assignment.values()) == [(5.0, 8 / 9, 3), (6.0, 8 / 9, 3)]
    assert ex.objective == pytest.approx(2 * transponder_power(3, 8 / 9, params.power), rel=1e-12)
    assert run_tpa(sol, params, B).transponder_power == pytest.approx(ex.objective, rel=0.02)


def test_tpa_exact_long_haul_frozen(params):
    # OSNR forces a low-order constellation and a wider band
    sol = run_rgo([request("q", 1, 2, 60)], _pair(9000), params.limits)
    ex = tpa_exact(sol, params, B)
    assert ex.assignment == {"1/1": (2.0, 8 / 9, 5)}
    assert ex.objective == pytest.approx(40.56, abs=1e-9)
    assert ex.margin >= 0


def test_tpa_exact_fixed_power_infeasible(params):
    sol = run_rgo([request("q", 1, 2, 60)], _pair(400), params.limits)
    assert not tpa_exact(sol, params, B, fixed_power={"1/1": 1e-9}).feasible


@pytest.mark.parametrize("seed", range(3))
def test_compare_instance_row(seed):
    rng = np.random.default_rng(seed)
    row = compare_instance(random_tiny_instance(rng, n_nodes=3), seed)
    assert tuple(row) == COMPARISON_COLUMNS
    assert row["rgo_check_passed"]
    assert row["rgo_heuristic"] >= row["rgo_exact"] - 1e-9
    if row["rel_gap"] is not None:
        assert row["validation_passed"]
        assert abs(row["rel_gap"]) <= 0.02


def test_random_instances_reproducible():
    a = random_tiny_instance(np.random.default_rng(7), n_nodes=4)
    b = random_tiny_instance(np.random.default_rng(7), n_nodes=4)
    assert a.requests == b.requests and a.net.links == b.net.links
