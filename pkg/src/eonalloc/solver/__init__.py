"""Smooth convex minimisation over log-sum-exp constraints."""
from .barrier import (
    InfeasibleProblemError,
    NonConvergenceError,
    NumericDomainError,
    Phase1Result,
    SolveResult,
    SolverError,
    SolverParams,
    TraceRow,
    minimize,
    phase1_feasible_point,
    solve,
)
from .kernels import BACKEND
from .problem import ExpSumObjective, LseConstraints, QuadraticObjective, SmoothProblem

__all__ = [
    "BACKEND", "ExpSumObjective", "InfeasibleProblemError", "LseConstraints", "NonConvergenceError",
    "NumericDomainError", "Phase1Result", "QuadraticObjective", "SmoothProblem", "SolveResult", "SolverError",
    "SolverParams", "TraceRow", "minimize", "phase1_feasible_point", "solve",
]
