"""Problem containers for the barrier solver.

Every inequality is a log-sum-exp of affine forms,

    F_k(x) = log sum_{i in k} exp(a_i . x + g_i) <= 0,

which covers both geometric-program constraints after the log change of
variables and plain affine constraints (a single term is just ``a . x + g``).
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Protocol, Sequence

import numpy as np
import scipy.sparse as sp


class Objective(Protocol):
    def value(self, x: np.ndarray) -> float: ...

    def derivatives(self, x: np.ndarray) -> tuple[float, np.ndarray, np.ndarray]:
        """(f, gradient, hessian); the hessian may be a 1-D diagonal."""
        ...


@dataclass(frozen=True)
class LseConstraints:
    """CSR-like storage: constraint k owns term rows ``term_ptr[k]:term_ptr[k+1]`` of ``A``."""

    term_ptr: np.ndarray
    A: sp.csr_matrix
    g: np.ndarray

    def __post_init__(self):
        ptr = np.ascontiguousarray(self.term_ptr, dtype=np.int64)
        A = sp.csr_matrix(self.A, dtype=np.float64)
        A.sort_indices()
        g = np.ascontiguousarray(self.g, dtype=np.float64)
        if ptr.ndim != 1 or ptr[0] != 0 or ptr[-1] != A.shape[0] or np.any(np.diff(ptr) < 1):
            raise ValueError("term_ptr must start at 0, end at the term count and give every constraint a term")
        if g.shape != (A.shape[0],):
            raise ValueError("one offset per term required")
        object.__setattr__(self, "term_ptr", ptr)
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "g", g)

    @property
    def m(self) -> int:
        return len(self.term_ptr) - 1

    @property
    def n(self) -> int:
        return self.A.shape[1]

    @classmethod
    def empty(cls, n: int) -> "LseConstraints":
        return cls(np.zeros(1, dtype=np.int64), sp.csr_matrix((0, n)), np.zeros(0))

    @classmethod
    def from_terms(cls, n: int, constraints: Sequence[Sequence[tuple[dict, float]]]) -> "LseConstraints":
        """Build from ``[[({var: coef}, log_coef), ...], ...]``."""
        ptr = [0]
        rows, cols, vals, g = [], [], [], []
        for terms in constraints:
            for coefs, offset in terms:
                row = len(g)
                for j, a in coefs.items():
                    if a != 0.0:
                        rows.append(row)
                        cols.append(j)
                        vals.append(a)
                g.append(offset)
            ptr.append(len(g))
        A = sp.csr_matrix((vals, (rows, cols)), shape=(len(g), n))
        return cls(np.asarray(ptr), A, np.asarray(g, dtype=float))

    @classmethod
    def affine(cls, G: np.ndarray, h: np.ndarray) -> "LseConstraints":
        """Linear inequalities ``G x <= h``."""
        G = np.atleast_2d(np.asarray(G, dtype=float))
        return cls(np.arange(G.shape[0] + 1), sp.csr_matrix(G), -np.asarray(h, dtype=float))

    def stack(self, other: "LseConstraints") -> "LseConstraints":
        if other.n != self.n:
            raise ValueError("dimension mismatch")
        ptr = np.concatenate([self.term_ptr, other.term_ptr[1:] + self.term_ptr[-1]])
        return LseConstraints(ptr, sp.vstack([self.A, other.A], format="csr"), np.concatenate([self.g, other.g]))

    def constraint_derivatives(self, k: int, x: np.ndarray) -> tuple[float, np.ndarray, np.ndarray]:
        """Value, gradient and dense hessian of a single constraint."""
        lo, hi = self.term_ptr[k], self.term_ptr[k + 1]
        rows = self.A[lo:hi].toarray()
        u = rows @ x + self.g[lo:hi]
        top = u.max()
        e = np.exp(u - top)
        s = e / e.sum()
        grad = s @ rows
        hess = (rows.T * s) @ rows - np.outer(grad, grad)
        return float(top + np.log(e.sum())), grad, hess


@dataclass(frozen=True)
class SmoothProblem:
    """min f(x) s.t. LSE constraints, plus optional strict lower bounds x_j > lb_j."""

    n: int
    objective: Objective
    constraints: LseConstraints
    lower_bounds: np.ndarray | None = None
    names: tuple[str, ...] = field(default=())

    def __post_init__(self):
        if self.constraints.n != self.n:
            raise ValueError("constraint dimension differs from problem dimension")

    @property
    def all_constraints(self) -> LseConstraints:
        """Constraints with the lower bounds appended as affine rows ``lb_j - x_j <= 0``."""
        cached = self.__dict__.get("_all")
        if cached is None:
            cached = self.constraints
            if self.lower_bounds is not None:
                lb = np.asarray(self.lower_bounds, dtype=float)
                idx = np.flatnonzero(np.isfinite(lb))
                if idx.size:
                    G = sp.csr_matrix((-np.ones(idx.size), (np.arange(idx.size), idx)), shape=(idx.size, self.n))
                    cached = cached.stack(LseConstraints(np.arange(idx.size + 1), G, lb[idx]))
            object.__setattr__(self, "_all", cached)
        return cached


class QuadraticObjective:
    """0.5 x'Qx + c'x + const."""

    def __init__(self, Q, c, const: float = 0.0):
        self.Q = np.asarray(Q, dtype=float)
        self.c = np.asarray(c, dtype=float)
        self.const = const

    def value(self, x):
        return float(0.5 * x @ self.Q @ x + self.c @ x + self.const)

    def derivatives(self, x):
        return self.value(x), self.Q @ x + self.c, self.Q


class ExpSumObjective:
    """sum_i w_i exp(a_i . x + g_i) + const with w_i >= 0."""

    def __init__(self, weights, A, g, const: float = 0.0):
        self.w = np.asarray(weights, dtype=float)
        self.A = sp.csr_matrix(A, dtype=float)
        self.g = np.asarray(g, dtype=float)
        self.const = const
        if np.any(self.w < 0):
            raise ValueError("weights must be nonnegative for convexity")

    def value(self, x):
        return float(self.w @ np.exp(self.A @ x + self.g) + self.const)

    def derivatives(self, x):
        e = self.w * np.exp(self.A @ x + self.g)
        grad = self.A.T @ e
        hess = (self.A.T @ sp.diags(e) @ self.A).toarray()
        return float(e.sum() + self.const), np.asarray(grad).ravel(), hess
