# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""
Compiled recursion kernels. Same signatures and results as _core_py.
"""

import numpy as np
cimport numpy as cnp
from libc.math cimport log, INFINITY

cnp.import_array()


cdef inline bint _step(const double[:] omega, const double[:, :] B,
                       const double[:, :] A, const double[:, :] x,
                       double[:, :] out, Py_ssize_t t, Py_ssize_t d) noexcept nogil:
    cdef Py_ssize_t i, j
    cdef double acc
    cdef bint ok = True
    for i in range(d):
        acc = omega[i]
        for j in range(d):
            acc += B[i, j] * out[t - 1, j] + A[i, j] * x[t - 1, j]
        out[t, i] = acc
        if not acc > 0:
            ok = False
    return ok


def mean_recursion(const double[:] omega, const double[:, :] B, const double[:, :] A,
                   const double[:, :] x, const double[:] mu1, double[:, :] out):
    cdef Py_ssize_t nobs = x.shape[0], d = x.shape[1], t, i
    cdef Py_ssize_t first_bad = -1
    with nogil:
        for i in range(d):
            out[0, i] = mu1[i]
            if not mu1[i] > 0:
                first_bad = 0
        for t in range(1, nobs):
            if not _step(omega, B, A, x, out, t, d) and first_bad < 0:
                first_bad = t
    return first_bad


cdef double _eta_quadratic(const double[:] omega, const double[:, :] B,
                           const double[:, :] A, const double[:, :] x,
                           const double[:, :] logx, const double[:] mu1,
                           const cnp.intp_t[:] labels, const double[:, :] locs,
                           const double[:, :, :] prec_chol, double[:, :] mu,
                           double[:] r) noexcept nogil:
    cdef Py_ssize_t nobs = x.shape[0], d = x.shape[1], t, i, j, k, cur, prev
    cdef double total = 0.0, acc
    for i in range(d):
        if not mu1[i] > 0:
            return INFINITY
        mu[0, i] = mu1[i]
    for t in range(nobs):
        cur = t & 1
        if t > 0:
            prev = 1 - cur
            for i in range(d):
                acc = omega[i]
                for j in range(d):
                    acc += B[i, j] * mu[prev, j] + A[i, j] * x[t - 1, j]
                if not acc > 0:
                    return INFINITY
                mu[cur, i] = acc
        k = labels[t]
        for i in range(d):
            r[i] = logx[t, i] - log(mu[cur, i]) - locs[k, i]
        # z = R' r with R lower triangular
        for i in range(d):
            acc = 0.0
            for j in range(i, d):
                acc += prec_chol[k, j, i] * r[j]
            total += acc * acc
    return total


def eta_quadratic(const double[:] omega, const double[:, :] B, const double[:, :] A,
                  const double[:, :] x, const double[:, :] logx, const double[:] mu1,
                  const cnp.intp_t[:] labels, const double[:, :] locs,
                  const double[:, :, :] prec_chol):
    cdef Py_ssize_t d = x.shape[1]
    cdef double[:, :] mu = np.empty((2, d))
    cdef double[:] r = np.empty(d)
    cdef double total
    with nogil:
        total = _eta_quadratic(omega, B, A, x, logx, mu1, labels, locs, prec_chol, mu, r)
    return total
