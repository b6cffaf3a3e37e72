# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot kernels; see ``calib._pykernels`` for the reference versions."""

import numpy as np
cimport numpy as cnp
from libc.math cimport exp, fmax, sqrt

cnp.import_array()

cdef double SQRT3 = sqrt(3.0)


def matern32(const double[:, ::1] X1, const double[:, ::1] X2, const double[::1] inv_ls, double sf2):
    cdef Py_ssize_t n1 = X1.shape[0], n2 = X2.shape[0], d = X1.shape[1]
    cdef Py_ssize_t i, j, k
    cdef double acc, t, r
    out = np.empty((n1, n2))
    cdef double[:, ::1] K = out
    for i in range(n1):
        for j in range(n2):
            acc = 0.0
            for k in range(d):
                t = (X1[i, k] - X2[j, k]) * inv_ls[k]
                acc += t * t
            r = SQRT3 * sqrt(acc)
            K[i, j] = sf2 * (1.0 + r) * exp(-r)
    return out


def improvement_mc(const double[::1] mean, const double[::1] std, const double[::1] z,
                   const double[::1] thresh, bint probability):
    cdef Py_ssize_t p = mean.shape[0], n = z.shape[0]
    cdef Py_ssize_t i, j
    cdef double m, s, v, acc
    out = np.empty(p)
    cdef double[::1] res = out
    for i in range(p):
        m = mean[i]
        s = std[i]
        acc = 0.0
        if probability:
            for j in range(n):
                v = m + s * z[j]
                if v * v < thresh[j]:
                    acc += 1.0
        else:
            for j in range(n):
                v = m + s * z[j]
                acc += fmax(thresh[j] - v * v, 0.0)
        res[i] = acc / n
    return out


def peak_search(const double[:, ::1] W, const double[:, ::1] FT, const double[::1] base):
    """Row-wise argmax of base + W @ FT.T; FT is the (n_ca, n_pc) transposed basis."""
    cdef Py_ssize_t p = W.shape[0], m = W.shape[1], n = FT.shape[0]
    cdef Py_ssize_t i, j, k, best
    cdef double acc, top
    cdef const double* w
    cdef const double* f
    idx = np.empty(p, dtype=np.intp)
    val = np.empty(p)
    cdef Py_ssize_t[::1] ri = idx
    cdef double[::1] rv = val
    for i in range(p):
        best = 0
        top = -1e300
        w = &W[i, 0]
        for j in range(n):
            f = &FT[j, 0]
            acc = base[j]
            for k in range(m):
                acc += w[k] * f[k]
            if acc > top:
                top = acc
                best = j
        ri[i] = best
        rv[i] = top
    return idx, val
