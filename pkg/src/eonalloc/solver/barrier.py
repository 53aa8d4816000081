"""Log-barrier path following with damped Newton centering."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve

from .kernels import lse_barrier, lse_values
from .problem import SmoothProblem

log = logging.getLogger(__name__)


class SolverError(RuntimeError):
    pass


class NumericDomainError(SolverError, ArithmeticError):
    """An evaluator returned NaN or overflowed at a strictly feasible point."""


class InfeasibleProblemError(SolverError):
    def __init__(self, message: str, certificate: "Phase1Result"):
        super().__init__(message)
        self.certificate = certificate


class NonConvergenceError(SolverError):
    def __init__(self, message: str, result: "SolveResult"):
        super().__init__(message)
        self.result = result


@dataclass(frozen=True)
class SolverParams:
    mu0: float = 1.0
    mu_factor: float = 0.2
    newton_tol: float = 1e-9
    kkt_tol: float = 1e-6
    max_outer: int = 60
    max_inner: int = 100
    phase1: str = "augmented"  # "augmented" | "none" (start must be strictly feasible)
    phase1_margin: float = 1e-3
    armijo: float = 0.01
    backtrack: float = 0.5

    def __post_init__(self):
        for name in ("mu0", "newton_tol", "kkt_tol", "phase1_margin"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if not 0 < self.mu_factor < 1 or not 0 < self.backtrack < 1 or not 0 < self.armijo < 0.5:
            raise ValueError("mu_factor and backtrack must lie in (0, 1), armijo in (0, 0.5)")
        if self.max_outer < 1 or self.max_inner < 1:
            raise ValueError("iteration caps must be positive")
        if self.phase1 not in ("augmented", "none"):
            raise ValueError(f"unknown phase-1 strategy {self.phase1!r}")


@dataclass(frozen=True)
class TraceRow:
    stage: str
    iteration: int
    mu: float
    objective: float
    residual: float


@dataclass
class SolveResult:
    x: np.ndarray
    objective: float
    kkt_residual: float
    gap: float
    iterations: int
    outer_iterations: int
    converged: bool
    mu: float
    multipliers: np.ndarray
    stage_objectives: list[float] = field(default_factory=list)
    trace: list[TraceRow] = field(default_factory=list)


@dataclass(frozen=True)
class Phase1Result:
    """``feasible`` with a strictly interior ``x``, or a certificate.

    For a certificate ``bound`` is a lower bound on min_x max_k F_k(x) that
    is positive; for a feasible point it is max_k F_k(x) < 0.
    """

    feasible: bool
    x: np.ndarray
    bound: float
    iterations: int


def _newton_direction(H: np.ndarray, grad: np.ndarray) -> np.ndarray:
    H = 0.5 * (H + H.T)
    scale = max(float(np.max(np.abs(np.diag(H)))) if H.size else 1.0, 1e-300)
    reg = 0.0
    for _ in range(30):
        try:
            factor = cho_factor(H + reg * np.eye(len(H)), lower=True, check_finite=False)
            step = -cho_solve(factor, grad, check_finite=False)
            if np.all(np.isfinite(step)):
                return step
        except (LinAlgError, ValueError):
            pass
        reg = scale * 1e-14 if reg == 0.0 else reg * 100.0
    raise NumericDomainError("Newton system could not be factorised")


def _center(z: np.ndarray, t: float, derivs: Callable, value: Callable, params: SolverParams,
            on_step: Callable | None = None, stop: Callable | None = None,
            grad_ok: Callable | None = None) -> tuple[np.ndarray, int, bool]:
    """Damped Newton on psi(z) = t f + barrier until lambda^2 / 2 <= newton_tol.

    When ``grad_ok`` is given the gradient itself must also pass it. Once the
    predicted decrease drops below the rounding noise of psi, a step is
    accepted if it shrinks the gradient norm instead.
    """
    for it in range(1, params.max_inner + 1):
        psi, grad, H = derivs(z, t)
        dz = _newton_direction(H, grad)
        slope = float(grad @ dz)
        if -slope / 2.0 <= params.newton_tol and (grad_ok is None or grad_ok(grad, t)):
            return z, it - 1, True
        step = 1.0
        noise = 1e-13 * max(1.0, abs(psi))
        gnorm = float(np.linalg.norm(grad))
        while True:
            trial = z + step * dz
            psi_new = value(trial, t)
            if psi_new <= psi + params.armijo * step * slope + noise:
                if -step * slope > noise or not math.isfinite(psi_new):
                    break
                # decrease is below what psi can resolve: judge by the gradient
                if math.isfinite(psi_new) and np.linalg.norm(derivs(trial, t)[1]) < gnorm:
                    break
            step *= params.backtrack
            if step < 1e-16:
                return z, it, False
        z = trial
        if on_step is not None:
            on_step(z, t)
        if stop is not None and stop(z):
            return z, it, True
    return z, params.max_inner, False


def _check_finite(*values) -> None:
    for v in values:
        if not np.all(np.isfinite(v)):
            raise NumericDomainError("non-finite objective or constraint evaluation")


def _hess_matrix(H, n: int) -> np.ndarray:
    H = np.asarray(H, dtype=float)
    return np.diag(H) if H.ndim == 1 else H


def minimize(prob: SmoothProblem, params: SolverParams = SolverParams(), start: np.ndarray | None = None,
             *, trace: bool = False) -> SolveResult:
    """Barrier path following from a strictly feasible ``start``.

    ``mu`` multiplies the barrier; the centering problem is
    ``(1/mu) f(x) - sum log(-F_k(x))``. The stopping test is the KKT
    residual (relative stationarity, complementarity m*mu, primal violation).
    """
    cons = prob.all_constraints
    m = cons.m
    x = np.zeros(prob.n) if start is None else np.array(start, dtype=float)
    if m:
        F0 = lse_values(cons, x)
        if not np.max(F0) < 0:
            raise ValueError(f"start is not strictly feasible (max constraint {np.max(F0):.3e})")

    rows: list[TraceRow] = []
    state = {"stage": 0, "newton": 0}
    mu = params.mu0

    def parts(x):
        F, phi, gphi, Hphi, *_ = lse_barrier(cons, x) if m else (np.zeros(0), 0.0, np.zeros(prob.n),
                                                                  np.zeros((prob.n, prob.n)))
        f, gf, Hf = prob.objective.derivatives(x)
        _check_finite(f, gf)
        return F, phi, gphi, Hphi, f, gf, _hess_matrix(Hf, prob.n)

    def residual(f, gf, gphi, mu_now, F):
        scale = max(1.0, float(np.max(np.abs(gf))) if gf.size else 1.0)
        stat = float(np.max(np.abs(gf + mu_now * gphi))) / scale if gf.size else 0.0
        comp = m * mu_now / max(1.0, abs(f))
        primal = max(0.0, float(np.max(F))) if m else 0.0
        return max(stat, comp, primal)

    def derivs(x, t):
        F, phi, gphi, Hphi, f, gf, Hf = parts(x)
        if not math.isfinite(phi):
            raise NumericDomainError("iterate left the feasible region")
        return t * f + phi, t * gf + gphi, t * Hf + Hphi

    def value(x, t):
        if m:
            F = lse_values(cons, x)
            if not np.all(F < 0):
                return math.inf
            phi = -float(np.sum(np.log(-F)))
        else:
            phi = 0.0
        f = prob.objective.value(x)
        if not math.isfinite(f):
            return math.inf
        return t * f + phi

    def record(x, t):
        state["newton"] += 1
        if trace:
            F, _phi, gphi, _H, f, gf, _Hf = parts(x)
            rows.append(TraceRow("minimize", state["newton"], 1.0 / t, f, residual(f, gf, gphi, 1.0 / t, F)))

    grad_scale = [max(1.0, float(np.max(np.abs(prob.objective.derivatives(x)[1]), initial=0.0)))]

    def grad_ok(grad, t):
        # centering gradient / t is the stationarity term of the KKT residual
        return float(np.max(np.abs(grad), initial=0.0)) / t <= 0.1 * params.kkt_tol * grad_scale[0]

    stage_obj = []
    converged = False
    best = None
    stalled = 0
    res = math.inf
    f = math.nan
    outer = 0
    for outer in range(1, params.max_outer + 1):
        t = 1.0 / mu if m else 1.0
        x, _n, centered = _center(x, t, derivs, value, params, on_step=record, grad_ok=grad_ok)
        F, phi, gphi, _H, f, gf, _Hf = parts(x)
        res = residual(f, gf, gphi, mu if m else 0.0, F)
        stage_obj.append(f)
        log.debug("stage %d mu=%.3e f=%.9g residual=%.3e centered=%s", outer, mu, f, res, centered)
        grad_scale[0] = max(1.0, float(np.max(np.abs(gf), initial=0.0)))
        if best is None or res < best[0]:
            best = (res, x.copy(), f, mu)
        if res <= params.kkt_tol or not m:
            converged = res <= params.kkt_tol
            break
        stalled = 0 if centered else stalled + 1
        if stalled >= 2:
            break
        mu *= params.mu_factor
    if best is not None and best[0] < res:
        res, x, f, mu = best
        log.debug("returning stage iterate with residual %.3e", res)

    if m:
        F = lse_values(cons, x)
        multipliers = mu / -F
    else:
        multipliers = np.zeros(0)
    result = SolveResult(x=x, objective=float(f), kkt_residual=float(res), gap=float(m * mu), iterations=state["newton"],
                         outer_iterations=outer, converged=converged, mu=mu, multipliers=multipliers,
                         stage_objectives=stage_obj, trace=rows)
    if not converged:
        log.warning("barrier method stopped after %d stages with KKT residual %.3e", outer, res)
    return result


def phase1_feasible_point(prob: SmoothProblem, params: SolverParams = SolverParams(),
                          start: np.ndarray | None = None) -> Phase1Result:
    """Strictly feasible point via min s s.t. F_k(x) <= s, s >= -1.

    Stops as soon as every constraint is below ``-phase1_margin``; a
    positive lower bound on the optimal s certifies infeasibility.
    """
    cons = prob.all_constraints
    m = cons.m
    n = prob.n
    x = np.zeros(n) if start is None else np.array(start, dtype=float)
    if m == 0:
        return Phase1Result(True, x, -math.inf, 0)
    F = lse_values(cons, x)
    _check_finite(F)
    margin = params.phase1_margin
    if np.max(F) <= -margin:
        return Phase1Result(True, x, float(np.max(F)), 0)

    z = np.append(x, max(float(np.max(F)), 0.0) + 1.0)

    def derivs(z, t):
        x, s = z[:n], z[n]
        F, phi, gphi, Hphi, ds, ds2, dxds = lse_barrier(cons, x, s)
        if not math.isfinite(phi) or s <= -1:
            raise NumericDomainError("phase-1 iterate left its domain")
        grad = np.append(gphi, t + ds - 1.0 / (s + 1.0))
        H = np.empty((n + 1, n + 1))
        H[:n, :n] = Hphi
        H[:n, n] = H[n, :n] = dxds
        H[n, n] = ds2 + 1.0 / (s + 1.0) ** 2
        return t * s + phi - math.log(s + 1.0), grad, H

    def value(z, t):
        x, s = z[:n], z[n]
        if s <= -1:
            return math.inf
        F = lse_values(cons, x)
        if not np.all(F < s):
            return math.inf
        return t * s - float(np.sum(np.log(s - F))) - math.log(s + 1.0)

    def done(z):
        return float(np.max(lse_values(cons, z[:n]))) <= -margin

    t = params.mu0
    total = 0
    for _stage in range(params.max_outer):
        z, its, _ok = _center(z, t, derivs, value, params, stop=done)
        total += its
        x = z[:n]
        worst = float(np.max(lse_values(cons, x)))
        if worst <= -margin:
            return Phase1Result(True, x, worst, total)
        lower = z[n] - (m + 1) / t
        if lower > 0:
            return Phase1Result(False, x, lower, total)
        if (m + 1) / t < 1e-10:
            break
        t /= params.mu_factor
    worst = float(np.max(lse_values(cons, x)))
    if worst < 0:
        return Phase1Result(True, x, worst, total)
    return Phase1Result(False, x, max(z[n] - (m + 1) / t, 0.0), total)


def solve(prob: SmoothProblem, params: SolverParams = SolverParams(), start: np.ndarray | None = None,
          *, trace: bool = False) -> SolveResult:
    """Phase 1 (unless ``start`` is already strictly feasible) followed by :func:`minimize`."""
    cons = prob.all_constraints
    x0 = np.zeros(prob.n) if start is None else np.asarray(start, dtype=float)
    if cons.m and not np.max(lse_values(cons, x0)) < 0:
        if params.phase1 == "none":
            raise ValueError("start is infeasible and phase 1 is disabled")
        p1 = phase1_feasible_point(prob, params, x0)
        if not p1.feasible:
            raise InfeasibleProblemError(f"no strictly feasible point (max constraint >= {p1.bound:.3e})", p1)
        x0 = p1.x
    return minimize(prob, params, x0, trace=trace)
