# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled kernels; semantics mirror ``_pykernels`` exactly."""

import numpy as np
cimport numpy as cnp
from libc.math cimport lgamma, log, log1p, exp, expm1, INFINITY
from libc.stdlib cimport malloc, free

cnp.import_array()

cdef double _BIG = 20.0


cdef inline double _log_expm1(double x) nogil:
    if x <= 0.0:
        return -INFINITY
    if x > _BIG:
        return x + log1p(-exp(-x))
    return log(expm1(x))


cdef inline double _logaddexp0(double a) nogil:
    # log(1 + e^a)
    if a == -INFINITY:
        return 0.0
    if a > 0.0:
        return a + log1p(exp(-a))
    return log1p(exp(a))


cdef double _binomial_log_mgf(int alpha, double q, const double* x, double* buf) nogil:
    cdef int v
    cdef double logq, log1mq, lga, m, s, t
    if q <= 0.0:
        return 0.0
    if q >= 1.0:
        return x[alpha]
    logq = log(q)
    log1mq = log1p(-q)
    lga = lgamma(alpha + 1.0)
    m = -INFINITY
    for v in range(1, alpha + 1):
        t = (lga - lgamma(v + 1.0) - lgamma(alpha - v + 1.0)
             + v * logq + (alpha - v) * log1mq + _log_expm1(x[v]))
        buf[v] = t
        if t > m:
            m = t
    if m == -INFINITY:
        return 0.0
    s = 0.0
    for v in range(1, alpha + 1):
        if buf[v] != -INFINITY:
            s += exp(buf[v] - m)
    return _logaddexp0(m + log(s))


def binomial_log_mgf(int alpha, double q, x):
    cdef double[::1] xv = np.ascontiguousarray(x, dtype=np.float64)
    cdef double* buf = <double*> malloc((alpha + 1) * sizeof(double))
    cdef double out
    try:
        out = _binomial_log_mgf(alpha, q, &xv[0], buf)
    finally:
        free(buf)
    return out


def subsampled_gaussian_curve(int amax, double q, double z):
    cdef cnp.ndarray[cnp.float64_t, ndim=1] out = np.empty(amax - 1)
    cdef double[::1] xv = np.empty(amax + 1)
    cdef double* buf = <double*> malloc((amax + 1) * sizeof(double))
    cdef int v, alpha
    for v in range(amax + 1):
        xv[v] = v * (v - 1.0) * z
    try:
        with nogil:
            for alpha in range(2, amax + 1):
                out[alpha - 2] = _binomial_log_mgf(alpha, q, &xv[0], buf) / (alpha - 1)
    finally:
        free(buf)
    return out


def twice_curve(int amax, double q1, eps0):
    cdef double[::1] e0 = np.ascontiguousarray(eps0, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] out = np.empty(amax - 1)
    cdef double[::1] xv = np.zeros(amax + 1)
    cdef double* buf = <double*> malloc((amax + 1) * sizeof(double))
    cdef int v, alpha
    for v in range(2, amax + 1):
        xv[v] = (v - 1.0) * e0[v]
    try:
        with nogil:
            for alpha in range(2, amax + 1):
                out[alpha - 2] = _binomial_log_mgf(alpha, q1, &xv[0], buf) / (alpha - 1)
    finally:
        free(buf)
    return out


def max_sign_quadratic(A):
    cdef double[:, ::1] a = np.ascontiguousarray(A, dtype=np.float64)
    cdef int d = a.shape[0]
    cdef cnp.ndarray[cnp.int8_t, ndim=1] zarr = np.ones(d, dtype=np.int8)
    cdef cnp.ndarray[cnp.int8_t, ndim=1] best_z = np.ones(d, dtype=np.int8)
    cdef double[::1] g = np.empty(d)
    cdef signed char[::1] z = zarr
    cdef long long step, n_steps, gray_prev, gray, diff
    cdef int i, j, k
    cdef double val, best, zk
    if d == 1:
        return float(a[0, 0]), best_z
    for i in range(d):
        g[i] = 0.0
        for j in range(d):
            g[i] += a[i, j]
    val = 0.0
    for i in range(d):
        val += g[i]
    best = val
    n_steps = (<long long> 1) << (d - 1)
    gray_prev = 0
    with nogil:
        for step in range(1, n_steps):
            gray = step ^ (step >> 1)
            diff = gray ^ gray_prev
            gray_prev = gray
            k = 1
            while (diff & 1) == 0:
                diff >>= 1
                k += 1
            zk = z[k]
            val = val - 4.0 * zk * g[k] + 4.0 * a[k, k]
            for i in range(d):
                g[i] -= 2.0 * zk * a[i, k]
            z[k] = -z[k]
            if (step & 4095) == 0:
                # resync against drift
                val = 0.0
                for i in range(d):
                    g[i] = 0.0
                    for j in range(d):
                        g[i] += a[i, j] * z[j]
                    val += z[i] * g[i]
            if val > best:
                best = val
                for i in range(d):
                    best_z[i] = z[i]
    zf = best_z.astype(np.float64)
    return float(zf @ np.asarray(A, dtype=np.float64) @ zf), best_z
