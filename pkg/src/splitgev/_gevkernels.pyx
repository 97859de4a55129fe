# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled GEV site kernels.

Same contract as ``_gevkernels_py``; see that module for the notation.
"""
import numpy as np
cimport numpy as cnp
from libc.math cimport exp, log1p, fabs, INFINITY, NAN, isfinite

cnp.import_array()

DEF NSERIES = 16
cdef double GUMBEL_EPS = 1e-8
cdef double SERIES_EPS = 0.05


cdef inline bint _obs(double y, double mu, double sinv, double xi,
                      double* z, double* x, double* t, double* lt,
                      double* L, double* a) noexcept nogil:
    # sinv = exp(-tau) is computed once per site by the caller
    z[0] = (y - mu) * sinv
    x[0] = xi * z[0]
    t[0] = 1.0 + x[0]
    if t[0] <= 0.0:
        return False
    lt[0] = log1p(x[0])
    if fabs(xi) < GUMBEL_EPS:
        L[0] = z[0] - 0.5 * xi * z[0] * z[0]
    else:
        L[0] = lt[0] / xi
    a[0] = exp(-L[0])
    return True


def logpdf(double[::1] y, double[::1] mu, double[::1] tau, double xi):
    cdef Py_ssize_t n = y.shape[0], k
    cdef double z, x, t, lt, L, a, v
    out = np.empty(n)
    cdef double[::1] o = out
    with nogil:
        for k in range(n):
            if _obs(y[k], mu[k], exp(-tau[k]), xi, &z, &x, &t, &lt, &L, &a):
                v = -tau[k] - lt - L - a
                o[k] = v if v == v else -INFINITY
            else:
                o[k] = -INFINITY
    return out


def site_loglik(double[::1] y, cnp.int64_t[::1] offsets, double[::1] mu,
                double[::1] tau, double xi):
    cdef Py_ssize_t J = offsets.shape[0] - 1, i, k
    cdef double z, x, t, lt, L, a, sinv, s, v
    out = np.empty(J)
    cdef double[::1] o = out
    with nogil:
        for i in range(J):
            s = 0.0
            sinv = exp(-tau[i])
            for k in range(offsets[i], offsets[i + 1]):
                if not _obs(y[k], mu[i], sinv, xi, &z, &x, &t, &lt, &L, &a):
                    s = -INFINITY
                    break
                v = -tau[i] - lt - L - a
                if not isfinite(v):
                    s = -INFINITY
                    break
                s += v
            o[i] = s
    return out


def site_derivs(double[::1] y, cnp.int64_t[::1] offsets, double[::1] mu,
                double[::1] tau, double xi):
    cdef Py_ssize_t J = offsets.shape[0] - 1, i, k
    cdef double z, x, t, lt, L, a, sinv, v, gz, hz
    cdef double f, g0, g1, h0, h1, h2
    cdef bint bad
    fo = np.empty(J)
    go = np.empty((J, 2))
    ho = np.empty((J, 3))
    cdef double[::1] F = fo
    cdef double[:, ::1] G = go
    cdef double[:, ::1] H = ho
    with nogil:
        for i in range(J):
            f = 0.0; g0 = 0.0; g1 = 0.0; h0 = 0.0; h1 = 0.0; h2 = 0.0
            bad = False
            sinv = exp(-tau[i])
            for k in range(offsets[i], offsets[i + 1]):
                if not _obs(y[k], mu[i], sinv, xi, &z, &x, &t, &lt, &L, &a):
                    bad = True
                    break
                v = -tau[i] - lt - L - a
                if not isfinite(v):
                    bad = True
                    break
                gz = (a - (1.0 + xi)) / t
                hz = (1.0 + xi) * (xi - a) / (t * t)
                f += v
                g0 += -sinv * gz
                g1 += -1.0 - gz * z
                h0 += sinv * sinv * hz
                h1 += sinv * (hz * z + gz)
                h2 += hz * z * z + gz * z
            if bad:
                F[i] = -INFINITY
                G[i, 0] = NAN; G[i, 1] = NAN
                H[i, 0] = NAN; H[i, 1] = NAN; H[i, 2] = NAN
            else:
                F[i] = f
                G[i, 0] = g0; G[i, 1] = g1
                H[i, 0] = h0; H[i, 1] = h1; H[i, 2] = h2
    return fo, go, ho


cdef inline void _dL(double z, double x, double t, double L, double xi,
                     double* d1, double* d2) noexcept nogil:
    cdef int k
    cdef double p, s1, s2, sgn
    if fabs(x) < SERIES_EPS:
        s1 = 0.0
        p = 1.0
        for k in range(1, NSERIES):
            sgn = -1.0 if k % 2 else 1.0
            s1 += sgn * k / (k + 1.0) * p
            p *= x
        s2 = 0.0
        p = 1.0
        for k in range(2, NSERIES + 1):
            sgn = 1.0 if k % 2 == 0 else -1.0
            s2 += sgn * k * (k - 1.0) / (k + 1.0) * p
            p *= x
        d1[0] = z * z * s1
        d2[0] = z * z * z * s2
    else:
        d1[0] = (z / t - L) / xi
        d2[0] = (-(z * z) / (t * t) - 2.0 * d1[0]) / xi


def xi_derivs(double[::1] y, cnp.int64_t[::1] offsets, double[::1] mu,
              double[::1] tau, double xi):
    cdef Py_ssize_t J = offsets.shape[0] - 1, i, k
    cdef double z, x, t, lt, L, a, sinv, v, d1L, d2L
    cdef double f = 0.0, s1 = 0.0, s2 = 0.0
    cdef bint bad = False
    with nogil:
        for i in range(J):
            sinv = exp(-tau[i])
            for k in range(offsets[i], offsets[i + 1]):
                if not _obs(y[k], mu[i], sinv, xi, &z, &x, &t, &lt, &L, &a):
                    bad = True
                    break
                v = -tau[i] - lt - L - a
                if not isfinite(v):
                    bad = True
                    break
                _dL(z, x, t, L, xi, &d1L, &d2L)
                f += v
                s1 += -z / t - d1L * (1.0 - a)
                s2 += (z * z) / (t * t) - d2L * (1.0 - a) - a * d1L * d1L
            if bad:
                break
    if bad:
        return -np.inf, np.nan, np.nan
    return f, s1, s2
