# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled log-sum-exp barrier kernels.

Constraint k owns term rows term_ptr[k]:term_ptr[k+1] of a CSR matrix
(indptr, indices, data). The hessian is assembled densely, one constraint at
a time, touching only the variables that constraint depends on.
"""
import numpy as np
cimport numpy as cnp
from libc.math cimport exp, log, INFINITY

cnp.import_array()

ctypedef cnp.int64_t i64
ctypedef cnp.int32_t i32


cdef inline double _row_dot(i64 row, const i32[::1] indptr, const i32[::1] indices,
                            const double[::1] data, const double[::1] x) noexcept nogil:
    cdef double acc = 0.0
    cdef i64 p
    for p in range(indptr[row], indptr[row + 1]):
        acc += data[p] * x[indices[p]]
    return acc


cdef void _values(const i64[::1] term_ptr, const i32[::1] indptr, const i32[::1] indices,
                  const double[::1] data, const double[::1] g, const double[::1] x,
                  double[::1] u, double[::1] F) noexcept nogil:
    cdef i64 k, i, lo, hi
    cdef double top, acc
    for k in range(term_ptr.shape[0] - 1):
        lo = term_ptr[k]
        hi = term_ptr[k + 1]
        top = -INFINITY
        for i in range(lo, hi):
            u[i] = g[i] + _row_dot(i, indptr, indices, data, x)
            if u[i] > top:
                top = u[i]
        acc = 0.0
        for i in range(lo, hi):
            u[i] = exp(u[i] - top)
            acc += u[i]
        for i in range(lo, hi):
            u[i] /= acc
        F[k] = top + log(acc)


def lse_values(const i64[::1] term_ptr, const i32[::1] indptr, const i32[::1] indices,
               const double[::1] data, const double[::1] g, const double[::1] x):
    cdef Py_ssize_t m = term_ptr.shape[0] - 1
    F = np.empty(m)
    u = np.empty(g.shape[0])
    cdef double[::1] Fv = F
    cdef double[::1] uv = u
    with nogil:
        _values(term_ptr, indptr, indices, data, g, x, uv, Fv)
    return F


def lse_barrier(const i64[::1] term_ptr, const i32[::1] indptr, const i32[::1] indices,
                const double[::1] data, const double[::1] g, const double[::1] x, double shift=0.0):
    """Barrier -sum log(shift - F_k) with derivatives in x and in ``shift``.

    Returns ``(F, phi, grad, hess, dphi_ds, d2phi_ds2, d2phi_dxds)``.
    """
    cdef Py_ssize_t m = term_ptr.shape[0] - 1
    cdef Py_ssize_t n = x.shape[0]
    F = np.empty(m)
    u = np.empty(g.shape[0])
    grad = np.zeros(n)
    hess = np.zeros((n, n))
    dxds = np.zeros(n)
    cdef double[::1] Fv = F
    cdef double[::1] s = u
    cdef double[::1] gr = grad
    cdef double[:, ::1] H = hess
    cdef double[::1] dx = dxds
    cdef double[::1] gF = np.zeros(n)
    cdef i64[::1] mark = np.full(n, -1, dtype=np.int64)
    cdef i64[::1] touched = np.empty(n, dtype=np.int64)
    cdef i64 k, i, p, q, a, b, nt, lo, hi
    cdef double w, w2, coef, ga, phi = 0.0, ds = 0.0, ds2 = 0.0
    cdef bint feasible = True

    with nogil:
        _values(term_ptr, indptr, indices, data, g, x, s, Fv)
        for k in range(m):
            if not Fv[k] < shift:
                feasible = False
                break
        if feasible:
            for k in range(m):
                lo = term_ptr[k]
                hi = term_ptr[k + 1]
                w = 1.0 / (shift - Fv[k])
                w2 = w * w
                phi -= log(shift - Fv[k])
                ds -= w
                ds2 += w2
                nt = 0
                for i in range(lo, hi):
                    for p in range(indptr[i], indptr[i + 1]):
                        a = indices[p]
                        if mark[a] != k:
                            mark[a] = k
                            touched[nt] = a
                            nt += 1
                            gF[a] = 0.0
                        gF[a] += s[i] * data[p]
                for p in range(nt):
                    a = touched[p]
                    gr[a] += w * gF[a]
                    dx[a] -= w2 * gF[a]
                coef = w2 - w
                for p in range(nt):
                    a = touched[p]
                    ga = coef * gF[a]
                    for q in range(nt):
                        H[a, touched[q]] += ga * gF[touched[q]]
                for i in range(lo, hi):
                    coef = w * s[i]
                    for p in range(indptr[i], indptr[i + 1]):
                        a = indices[p]
                        ga = coef * data[p]
                        for q in range(indptr[i], indptr[i + 1]):
                            H[a, indices[q]] += ga * data[q]
    if not feasible:
        return F, np.inf, np.zeros(n), np.zeros((n, n)), 0.0, 0.0, np.zeros(n)
    return F, phi, grad, hess, ds, ds2, dxds
