import itertools

import pytest
from hypothesis import given, strategies as st

from eonalloc.model import RgoWeights, TrafficRequest, TransponderLimits, bidirectional
from eonalloc.rgo import (CapacityExceededError, GroomScenario, RgoSolution, TransponderState,
                          enumerate_groom_scenarios, ilp_check, ilp_objective, partition_traffic, run_rgo,
                          select_scenario)
from eonalloc.topology import shortest_path
from conftest import request

C = 100e9
LIMITS = TransponderLimits(C)


def _example_state(net):
    """Half-full lightpaths 1->3 and 3->4, as in the worked grooming example."""
    state = TransponderState(net, C)
    state.open(shortest_path(net, 1, 3), {"pre13": C / 2})
    state.open(shortest_path(net, 3, 4), {"pre34": C / 2})
    return state


def test_partition_examples():
    q = TrafficRequest("q", 1, 2, 2.5 * C)
    pieces = partition_traffic([q], LIMITS)
    assert [(p.rate, p.full) for p in pieces] == [(C, True), (C, True), (0.5 * C, False)]
    exact = partition_traffic([TrafficRequest("q", 1, 2, C)], LIMITS)
    assert [(p.rate, p.full) for p in exact] == [(C, True)]


@given(st.lists(st.floats(1e6, 1e12), min_size=1, max_size=10))
def test_partition_preserves_volume(rates):
    reqs = [TrafficRequest(k, 1, 2, r) for k, r in enumerate(rates)]
    pieces = partition_traffic(reqs, LIMITS)
    for q in reqs:
        mine = [p.rate for p in pieces if p.request is q]
        assert sum(mine) == pytest.approx(q.rate, rel=1e-12)
        assert all(r <= C * (1 + 1e-12) for r in mine)


def test_grooming_example_table(line_net):
    path = shortest_path(line_net, 1, 4)
    scen = {s.nodes: (s.matc, s.mspl) for s in enumerate_groom_scenarios(path, _example_state(line_net))}
    assert scen == {(1, 4): (C, 4500), (1, 2, 4): (0.0, 3000), (1, 3, 4): (C / 2, 3500),
                    (1, 2, 3, 4): (0.0, 2000)}


def test_grooming_example_selection(line_net):
    path = shortest_path(line_net, 1, 4)
    scen = enumerate_groom_scenarios(path, _example_state(line_net))
    assert select_scenario(scen, C / 2, C).nodes == (1, 3, 4)
    assert select_scenario(scen, C, C).nodes == (1, 4)


def test_grooming_example_end_to_end(line_net):
    state = _example_state(line_net)
    sol = run_rgo([request("q", 1, 4, 50)], line_net, LIMITS, state=state)
    assert sol.active_transponders == 2
    carriers = sorted(lp.path.nodes for lp in sol.lightpaths() if "q" in lp.flows)
    assert carriers == [(1, 2, 3), (3, 4)]
    pre = [TrafficRequest("pre13", 1, 3, C / 2), TrafficRequest("pre34", 3, 4, C / 2)]
    assert ilp_check(sol, pre + [request("q", 1, 4, 50)], line_net, LIMITS).feasible


def test_one_hop_single_scenario(line_net):
    path = shortest_path(line_net, 3, 4)
    (only,) = enumerate_groom_scenarios(path, TransponderState(line_net, C))
    assert only.mspl == 1000 and only.direct


@pytest.mark.parametrize("h", range(1, 7))
def test_scenario_count(h):
    net = bidirectional(range(h + 1), [(k, k + 1, 100 + k) for k in range(h)], transponders_per_node=2,
                        fiber_bandwidth=1e12)
    path = shortest_path(net, 0, h)
    assert len(enumerate_groom_scenarios(path, TransponderState(net, C))) == 2 ** (h - 1)


def test_tie_break_prefers_larger_matc_then_cuts():
    a = GroomScenario((1, 3, 4), (0, 2, 3), (10, 5), C / 4, 10)
    b = GroomScenario((1, 2, 4), (0, 1, 3), (10, 5), C / 2, 10)
    c = GroomScenario((1, 4), (0, 3), (15,), C, 15)
    assert select_scenario([a, b, c], C / 8, C) is b
    d = GroomScenario((1, 2, 4), (0, 1, 3), (10, 5), C / 4, 10)
    assert select_scenario([a, d], C / 8, C) is d  # cuts (0, 1, 3) < (0, 2, 3)


def test_single_request_single_link():
    net = bidirectional([1, 2], [(1, 2, 300)], transponders_per_node=1, fiber_bandwidth=1e12)
    reqs = [request("q", 1, 2, 40)]
    sol = run_rgo(reqs, net, LIMITS)
    assert sol.active_transponders == 1
    assert sol.pairings == {((1, 1), (2, 1))}
    report = ilp_check(sol, reqs, net, LIMITS)
    assert report.feasible
    assert report.objective == pytest.approx(300 + 1 + 60e9 * 1e-9)


def test_bank_exhaustion():
    net = bidirectional([1, 2], [(1, 2, 300)], transponders_per_node=1, fiber_bandwidth=1e12)
    with pytest.raises(CapacityExceededError):
        run_rgo([request("q", 1, 2, 150)], net, LIMITS)


def test_kcl_violation_detected(line_net):
    reqs = [request("q", 1, 4, 50)]
    sol = run_rgo(reqs, line_net, LIMITS)
    ((key, rate),) = sol.drop_flows.items()
    sol.drop_flows[key] = rate / 2
    report = ilp_check(sol, reqs, line_net, LIMITS)
    assert not report.feasible
    assert {v.constraint for v in report.violations} >= {"kcl"}


def test_empty_demand(line_net):
    sol = run_rgo([], line_net, LIMITS)
    report = ilp_check(sol, [], line_net, LIMITS)
    assert report.feasible and report.objective == 0.0


NODES = [1, 2, 3, 4, 5]
SPANS = [(1, 2, 400), (2, 3, 900), (3, 4, 300), (4, 5, 1200), (1, 5, 700), (2, 4, 1100)]


@st.composite
def demands(draw):
    pairs = draw(st.lists(st.sampled_from(list(itertools.permutations(NODES, 2))), min_size=1, max_size=10,
                          unique=True))
    gbps = draw(st.lists(st.integers(1, 320), min_size=len(pairs), max_size=len(pairs)))
    return [request(f"{s}>{d}", s, d, g) for (s, d), g in zip(pairs, gbps)]


def _net():
    return bidirectional(NODES, SPANS, transponders_per_node=64, fiber_bandwidth=2e12)


@given(demands())
def test_heuristic_output_passes_ilp_check(reqs):
    net = _net()
    for grooming in (True, False):
        sol = run_rgo(reqs, net, LIMITS, grooming=grooming)
        report = ilp_check(sol, reqs, net, LIMITS)
        assert report.feasible, report.violations
        assert report.objective == pytest.approx(ilp_objective(sol, net, LIMITS, RgoWeights()))


@given(demands())
def test_volume_and_route_length(reqs):
    net = _net()
    sol = run_rgo(reqs, net, LIMITS)
    for q in reqs:
        sp = shortest_path(net, q.source, q.destination)
        out_of_source = sum(r for (tx, qid), r in sol.add_flows.items() if qid == q.id and tx[0] == q.source)
        assert out_of_source == pytest.approx(q.rate, rel=1e-12)
        for lp in sol.lightpaths():
            if q.id in lp.flows:
                assert lp.path.length_km <= sp.length_km + 1e-9
                assert set(lp.path.links) <= set(sp.links)


@given(demands())
def test_no_grooming_baseline_is_shortest_path_only(reqs):
    net = _net()
    sol = run_rgo(reqs, net, LIMITS, grooming=False)
    for lp in sol.lightpaths():
        assert len(lp.flows) == 1
        (qid,) = lp.flows
        q = next(r for r in reqs if r.id == qid)
        assert lp.path == shortest_path(net, q.source, q.destination)


@given(demands())
def test_deterministic_and_serialisable(reqs):
    net = _net()
    a, b = run_rgo(reqs, net, LIMITS), run_rgo(list(reqs), net, LIMITS)
    assert a.to_json() == b.to_json()
    assert RgoSolution.from_json(a.to_json(), net).to_json() == a.to_json()


@given(demands())
def test_spectral_order_is_a_permutation_of_occupants(reqs):
    net = _net()
    sol = run_rgo(reqs, net, LIMITS)
    for link in sol.used_links():
        occupants = {tx for tx, p in sol.routes.items() if link in p.links}
        assert sorted(sol.spectral_order[link]) == sorted(occupants)
