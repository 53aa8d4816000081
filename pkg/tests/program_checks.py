"""Numerical convexity and derivative checks shared by the TPA and acceptance tests."""
import numpy as np

from eonalloc.solver import phase1_feasible_point
from eonalloc.solver.kernels import lse_values


def interior_points(prog, count, rng, scale=0.2):
    """Strictly feasible random points around a phase-1 point of ``prog``."""
    cons = prog.problem.all_constraints
    base = phase1_feasible_point(prog.problem, start=prog.heuristic_start()).x
    out = []
    s = scale
    while len(out) < count:
        x = base + rng.normal(scale=s, size=base.size)
        if np.all(lse_values(cons, x) < 0):
            out.append(x)
        else:
            s *= 0.9
    return out


def min_hessian_eigen(prog, x):
    """Smallest scaled Hessian eigenvalue over the objective and every constraint at ``x``."""
    cons = prog.problem.all_constraints
    H0 = np.asarray(prog.objective.derivatives(x)[2])
    mats = [np.diag(H0) if H0.ndim == 1 else H0]
    mats += [cons.constraint_derivatives(k, x)[2] for k in range(cons.m)]
    worst = np.inf
    for H in mats:
        H = 0.5 * (H + H.T)
        worst = min(worst, np.linalg.eigvalsh(H).min() / max(1.0, np.abs(H).max()))
    return worst


def gradient_error(fun, x, h=1e-6):
    """Relative sup-norm gap between ``fun``'s analytic gradient and central differences."""
    _v, g = fun(x)[:2]
    fd = np.empty_like(x)
    for j in range(x.size):
        e = np.zeros_like(x)
        e[j] = h * max(1.0, abs(x[j]))
        fd[j] = (fun(x + e)[0] - fun(x - e)[0]) / (2 * e[j])
    return float(np.max(np.abs(g - fd))) / max(1.0, float(np.max(np.abs(g))))


def worst_gradient_error(prog, x):
    cons = prog.problem.all_constraints
    funs = [prog.objective.derivatives] + [lambda z, k=k: cons.constraint_derivatives(k, z) for k in range(cons.m)]
    return max(gradient_error(f, x) for f in funs)
