# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled row kernels for the tensor core.

Every function works on C-contiguous float64 arrays viewed as ``[rows, n]``
and mirrors the numpy reference in ``_kernels_py`` to rounding error.
"""

import numpy as np
cimport numpy as cnp
from libc.math cimport exp, sqrt, erf, M_SQRT1_2, M_PI

cnp.import_array()

cdef double _INV_SQRT_2PI = 0.3989422804014327


def softmax_rows(double[:, ::1] x, const unsigned char[:, ::1] mask=None):
    cdef Py_ssize_t rows = x.shape[0], n = x.shape[1], i, j
    out = np.zeros((rows, n), dtype=np.float64)
    cdef double[:, ::1] y = out
    cdef double m, total, e
    cdef bint any_kept
    for i in range(rows):
        any_kept = False
        m = 0.0
        for j in range(n):
            if mask is not None and mask[i, j] == 0:
                continue
            if not any_kept or x[i, j] > m:
                m = x[i, j]
            any_kept = True
        if not any_kept:
            continue
        total = 0.0
        for j in range(n):
            if mask is not None and mask[i, j] == 0:
                continue
            e = exp(x[i, j] - m)
            y[i, j] = e
            total += e
        for j in range(n):
            y[i, j] = y[i, j] / total
    return out


def softmax_rows_backward(double[:, ::1] y, double[:, ::1] gy):
    cdef Py_ssize_t rows = y.shape[0], n = y.shape[1], i, j
    out = np.empty((rows, n), dtype=np.float64)
    cdef double[:, ::1] gx = out
    cdef double dot
    for i in range(rows):
        dot = 0.0
        for j in range(n):
            dot += gy[i, j] * y[i, j]
        for j in range(n):
            gx[i, j] = y[i, j] * (gy[i, j] - dot)
    return out


def layer_norm_rows(double[:, ::1] x, double[::1] gamma, double[::1] beta, double eps):
    cdef Py_ssize_t rows = x.shape[0], n = x.shape[1], i, j
    out = np.empty((rows, n), dtype=np.float64)
    xhat_arr = np.empty((rows, n), dtype=np.float64)
    rstd_arr = np.empty(rows, dtype=np.float64)
    cdef double[:, ::1] y = out
    cdef double[:, ::1] xh = xhat_arr
    cdef double[::1] rs = rstd_arr
    cdef double mean, var, d, r
    for i in range(rows):
        mean = 0.0
        for j in range(n):
            mean += x[i, j]
        mean /= n
        var = 0.0
        for j in range(n):
            d = x[i, j] - mean
            var += d * d
        var /= n
        r = 1.0 / sqrt(var + eps)
        rs[i] = r
        for j in range(n):
            d = (x[i, j] - mean) * r
            xh[i, j] = d
            y[i, j] = d * gamma[j] + beta[j]
    return out, xhat_arr, rstd_arr


def layer_norm_rows_backward(double[:, ::1] gy, double[:, ::1] xhat, double[::1] rstd,
                             double[::1] gamma):
    cdef Py_ssize_t rows = gy.shape[0], n = gy.shape[1], i, j
    gx_arr = np.empty((rows, n), dtype=np.float64)
    ggamma_arr = np.zeros(n, dtype=np.float64)
    gbeta_arr = np.zeros(n, dtype=np.float64)
    cdef double[:, ::1] gx = gx_arr
    cdef double[::1] gg = ggamma_arr
    cdef double[::1] gb = gbeta_arr
    cdef double s1, s2, g
    for i in range(rows):
        s1 = 0.0
        s2 = 0.0
        for j in range(n):
            g = gy[i, j] * gamma[j]
            s1 += g
            s2 += g * xhat[i, j]
            gg[j] += gy[i, j] * xhat[i, j]
            gb[j] += gy[i, j]
        s1 /= n
        s2 /= n
        for j in range(n):
            g = gy[i, j] * gamma[j]
            gx[i, j] = rstd[i] * (g - s1 - xhat[i, j] * s2)
    return gx_arr, ggamma_arr, gbeta_arr


def gelu(double[::1] x):
    cdef Py_ssize_t n = x.shape[0], i
    out = np.empty(n, dtype=np.float64)
    cdef double[::1] y = out
    for i in range(n):
        y[i] = 0.5 * x[i] * (1.0 + erf(x[i] * M_SQRT1_2))
    return out


def gelu_backward(double[::1] x, double[::1] gy):
    cdef Py_ssize_t n = x.shape[0], i
    out = np.empty(n, dtype=np.float64)
    cdef double[::1] gx = out
    cdef double cdf, pdf
    for i in range(n):
        cdf = 0.5 * (1.0 + erf(x[i] * M_SQRT1_2))
        pdf = _INV_SQRT_2PI * exp(-0.5 * x[i] * x[i])
        gx[i] = gy[i] * (cdf + x[i] * pdf)
    return out
