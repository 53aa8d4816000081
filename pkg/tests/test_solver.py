import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from eonalloc.solver import (ExpSumObjective, InfeasibleProblemError, LseConstraints, NumericDomainError,
                             QuadraticObjective, SmoothProblem, SolverParams, minimize, phase1_feasible_point,
                             solve)
from eonalloc.solver.kernels import available_backends, lse_barrier, lse_values


def _box(n, lo, hi):
    G = np.vstack([np.eye(n), -np.eye(n)])
    return LseConstraints.affine(G, np.concatenate([hi, -lo]))


def _zero(n):
    return QuadraticObjective(np.zeros((n, n)), np.zeros(n))


def test_box_analytic_center():
    lo, hi = np.array([0.0, -2.0, 3.0]), np.array([1.0, 4.0, 3.5])
    res = solve(SmoothProblem(3, _zero(3), _box(3, lo, hi)), start=np.array([0.9, 3.9, 3.01]))
    assert res.converged
    np.testing.assert_allclose(res.x, (lo + hi) / 2, atol=1e-9)


def test_phase1_finds_interior_point():
    lo, hi = np.full(4, 2.0), np.full(4, 2.5)
    prob = SmoothProblem(4, _zero(4), _box(4, lo, hi))
    p1 = phase1_feasible_point(prob)
    assert p1.feasible
    assert np.all(lse_values(prob.all_constraints, p1.x) < 0)


def test_infeasible_certificate():
    cons = LseConstraints.affine(np.array([[1.0], [-1.0]]), np.array([0.0, -1.0]))  # x <= 0, x >= 1
    with pytest.raises(InfeasibleProblemError) as err:
        solve(SmoothProblem(1, _zero(1), cons))
    cert = err.value.certificate
    assert not cert.feasible and cert.bound > 0


def test_square_with_lower_bound():
    prob = SmoothProblem(1, QuadraticObjective([[2.0]], [0.0]), LseConstraints.empty(1), lower_bounds=np.array([1.0]))
    res = solve(prob, start=np.array([5.0]))
    assert res.converged and res.kkt_residual <= 1e-6
    assert res.x[0] == pytest.approx(1.0, abs=1e-6)
    assert res.objective == pytest.approx(1.0, abs=1e-6)


@pytest.mark.parametrize("n", [1, 3, 8])
def test_exp_sum_with_halfspace(n):
    cons = LseConstraints.affine(-np.ones((1, n)), np.zeros(1))  # sum x >= 0
    prob = SmoothProblem(n, ExpSumObjective(np.ones(n), np.eye(n), np.zeros(n)), cons)
    res = solve(prob, start=np.ones(n))
    assert res.converged
    np.testing.assert_allclose(res.x, 0.0, atol=1e-5)
    assert res.objective == pytest.approx(n, rel=1e-6)


def _projected_gradient(Q, c, lo, hi, iters=50000):
    x = np.clip(np.zeros_like(c), lo, hi)
    step = 1.0 / np.linalg.eigvalsh(Q)[-1]
    for _ in range(iters):
        nxt = np.clip(x - step * (Q @ x + c), lo, hi)
        if np.max(np.abs(nxt - x)) < 1e-15:
            break
        x = nxt
    return x


@pytest.mark.parametrize("seed", range(8))
def test_box_qp_matches_projected_gradient(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(2, 7))
    M = rng.normal(size=(n, n))
    Q = M @ M.T + 0.5 * np.eye(n)
    c = rng.normal(scale=3.0, size=n)
    lo = rng.uniform(-2, 0, n)
    hi = lo + rng.uniform(0.5, 3, n)
    obj = QuadraticObjective(Q, c)
    res = solve(SmoothProblem(n, obj, _box(n, lo, hi)), start=(lo + hi) / 2)
    ref = _projected_gradient(Q, c, lo, hi)
    assert res.converged
    f_ref = obj.value(ref)
    assert abs(res.objective - f_ref) <= 1e-6 * max(1.0, abs(f_ref))
    # barrier duality gap bounds the suboptimality
    assert res.objective - f_ref <= res.gap + 1e-9


def test_stage_objectives_descend_and_reproduce():
    rng = np.random.default_rng(3)
    n = 5
    M = rng.normal(size=(n, n))
    obj = QuadraticObjective(M @ M.T + np.eye(n), rng.normal(size=n) * 4)
    prob = SmoothProblem(n, obj, _box(n, -np.ones(n), np.ones(n)))
    a = solve(prob, start=np.zeros(n), trace=True)
    b = solve(prob, start=np.zeros(n), trace=True)
    so = np.array(a.stage_objectives)
    assert np.all(np.diff(so) <= 1e-9 * np.maximum(1.0, np.abs(so[1:])))
    assert a.x.tobytes() == b.x.tobytes()
    assert [r.objective for r in a.trace] == [r.objective for r in b.trace]
    assert np.all(a.multipliers >= 0)


def test_iteration_cap_reports_non_converged():
    prob = SmoothProblem(2, QuadraticObjective(np.eye(2), [-5.0, -5.0]), _box(2, np.zeros(2), np.ones(2)))
    res = minimize(prob, SolverParams(max_outer=1), start=np.full(2, 0.5))
    assert not res.converged and res.kkt_residual > 1e-6


def test_infeasible_start_rejected_by_minimize():
    prob = SmoothProblem(1, _zero(1), LseConstraints.affine([[1.0]], [0.0]))
    with pytest.raises(ValueError):
        minimize(prob, start=np.array([1.0]))


@pytest.mark.filterwarnings("ignore:overflow")
def test_non_finite_objective_raises():
    prob = SmoothProblem(1, ExpSumObjective([1.0], [[1.0]], [0.0]), LseConstraints.empty(1))
    with pytest.raises(NumericDomainError):
        solve(prob, start=np.array([1e4]))


def test_invalid_params():
    with pytest.raises(ValueError):
        SolverParams(mu_factor=1.5)
    with pytest.raises(ValueError):
        SolverParams(phase1="magic")


def test_lse_constraint_matches_dense_formula():
    cons = LseConstraints.from_terms(3, [[({0: 1.0, 1: -2.0}, 0.3), ({2: 1.0}, -1.0)], [({1: 1.0}, -4.0)]])
    x = np.array([0.2, -0.4, 1.1])
    F = lse_values(cons, x)
    assert F[0] == pytest.approx(np.log(np.exp(0.2 + 0.8 + 0.3) + np.exp(1.1 - 1.0)), rel=1e-14)
    assert F[1] == pytest.approx(-4.4, rel=1e-14)


@st.composite
def lse_instances(draw):
    n = draw(st.integers(1, 6))
    sizes = draw(st.lists(st.integers(1, 4), min_size=1, max_size=6))
    terms = sum(sizes)
    A = draw(arrays(np.float64, (terms, n), elements=st.floats(-3, 3)))
    g = draw(arrays(np.float64, terms, elements=st.floats(-3, 3)))
    x = draw(arrays(np.float64, n, elements=st.floats(-1, 1)))
    cons = LseConstraints(np.concatenate([[0], np.cumsum(sizes)]), sp.csr_matrix(A), g)
    # shift the offsets so every constraint is strictly satisfied at x
    F = lse_values(cons, x, backend=available_backends()["python"])
    cons = LseConstraints(cons.term_ptr, cons.A, g - np.repeat(F + 1.0, sizes))
    return cons, x


@pytest.mark.skipif("compiled" not in available_backends(), reason="compiled kernels not built")
@given(lse_instances(), st.floats(0.0, 2.0))
def test_backends_agree(inst, shift):
    cons, x = inst
    back = available_backends()
    py = lse_barrier(cons, x, shift, backend=back["python"])
    cy = lse_barrier(cons, x, shift, backend=back["compiled"])
    for a, b in zip(py, cy):
        np.testing.assert_allclose(a, b, rtol=1e-10, atol=1e-12)


@given(lse_instances())
def test_barrier_hessian_is_psd(inst):
    cons, x = inst
    _F, phi, _g, H, *_ = lse_barrier(cons, x)
    assert np.isfinite(phi)
    assert np.linalg.eigvalsh(0.5 * (H + H.T)).min() >= -1e-9 * max(1.0, np.abs(H).max())
