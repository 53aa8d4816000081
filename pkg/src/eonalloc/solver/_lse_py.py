"""numpy/scipy implementation of the log-sum-exp barrier kernels.

Same signatures and results as the compiled ``_lse_kernels`` module; used
when the extension is not built or ``EONALLOC_PURE_PYTHON`` is set.
"""
from __future__ import annotations

import numpy as np
import scipy.sparse as sp


def _segments(term_ptr, indptr, indices, data, g, x):
    n_terms = len(g)
    A = sp.csr_matrix((data, indices, indptr), shape=(n_terms, len(x)))
    counts = np.diff(term_ptr)
    starts = term_ptr[:-1]
    u = A @ x + g
    top = np.maximum.reduceat(u, starts) if n_terms else np.zeros(0)
    e = np.exp(u - np.repeat(top, counts))
    sums = np.add.reduceat(e, starts) if n_terms else np.zeros(0)
    return A, counts, top + np.log(sums), e / np.repeat(sums, counts)


def lse_values(term_ptr, indptr, indices, data, g, x):
    return _segments(term_ptr, indptr, indices, data, g, x)[2]


def lse_barrier(term_ptr, indptr, indices, data, g, x, shift=0.0):
    """Barrier -sum log(shift - F_k) with derivatives in x and in ``shift``.

    Returns ``(F, phi, grad, hess, dphi_ds, d2phi_ds2, d2phi_dxds)``; ``phi`` is
    ``inf`` (and the derivative arrays zero) when some F_k >= shift.
    """
    n = len(x)
    A, counts, F, s = _segments(term_ptr, indptr, indices, data, g, x)
    m = len(F)
    slack = shift - F
    if m and not np.all(slack > 0):
        return F, np.inf, np.zeros(n), np.zeros((n, n)), 0.0, 0.0, np.zeros(n)
    w = 1.0 / slack
    owner = np.repeat(np.arange(m), counts)
    P = sp.csr_matrix((np.ones(len(owner)), (owner, np.arange(len(owner)))), shape=(m, len(owner)))
    J = P @ sp.diags(s) @ A
    grad = np.asarray(J.T @ w).ravel()
    hess = J.T @ sp.diags(w * w - w) @ J + A.T @ sp.diags(s * w[owner]) @ A
    hess = hess.toarray() if sp.issparse(hess) else np.asarray(hess)
    dxds = -np.asarray(J.T @ (w * w)).ravel()
    return F, float(-np.log(slack).sum()), grad, hess, float(-w.sum()), float((w * w).sum()), dxds
