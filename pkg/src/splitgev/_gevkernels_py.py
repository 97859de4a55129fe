"""Vectorised numpy implementation of the GEV site kernels.

Mirrors ``_gevkernels.pyx`` one-to-one and is used when the compiled
extension is unavailable. Observations are stored flat, grouped by site, with
``offsets[i]:offsets[i + 1]`` delimiting site ``i``.

All per-observation formulas are written in terms of

    z = (y - mu) * exp(-tau),   x = xi * z,   t = 1 + x,
    L = log(t) / xi,            a = exp(-L) = t ** (-1 / xi)

so that the log-density is ``-tau - log(t) - L - a`` and the Gumbel limit
falls out of ``L -> z`` as ``xi -> 0``. See ``docs/derivatives.md``.
"""
from __future__ import annotations

import numpy as np

GUMBEL_EPS = 1e-8
SERIES_EPS = 0.05
_NSERIES = 16


def _expand(offsets, values):
    counts = np.diff(offsets)
    return np.repeat(np.asarray(values, dtype=float), counts)


def _site_index(offsets):
    return np.repeat(np.arange(len(offsets) - 1), np.diff(offsets))


def _core(y, mu, tau, xi):
    """Per-observation z, t, L, a and an in-support mask."""
    sinv = np.exp(-tau)
    z = (y - mu) * sinv
    x = xi * z
    t = 1.0 + x
    inside = t > 0.0
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        if abs(xi) < GUMBEL_EPS:
            L = z - 0.5 * xi * z * z
        else:
            L = np.log1p(np.where(inside, x, 0.0)) / xi
        a = np.exp(-L)
    return z, x, t, L, a, inside, sinv


def logpdf(y, mu, tau, xi):
    """Elementwise GEV log-density; ``-inf`` outside the support."""
    y, mu, tau = np.broadcast_arrays(
        np.asarray(y, float), np.asarray(mu, float), np.asarray(tau, float)
    )
    z, x, t, L, a, inside, _ = _core(y, mu, tau, float(xi))
    with np.errstate(invalid="ignore", over="ignore"):
        out = -tau - np.log1p(np.where(inside, x, 0.0)) - L - a
    out = np.where(inside, out, -np.inf)
    return np.where(np.isnan(out), -np.inf, out)


def site_loglik(y, offsets, mu, tau, xi):
    """Per-site sums of log-densities, shape ``(J,)``."""
    J = len(offsets) - 1
    lp = logpdf(y, _expand(offsets, mu), _expand(offsets, tau), xi)
    idx = _site_index(offsets)
    out = np.zeros(J)
    bad = ~np.isfinite(lp)
    np.add.at(out, idx[~bad], lp[~bad])
    out[np.unique(idx[bad])] = -np.inf
    return out


def site_derivs(y, offsets, mu, tau, xi):
    """Per-site log-likelihood, gradient and Hessian in ``(mu, tau)``.

    Returns ``f`` of shape ``(J,)``, ``g`` of shape ``(J, 2)`` and ``h`` of
    shape ``(J, 3)`` holding ``(h_mumu, h_mutau, h_tautau)``. Sites with an
    out-of-support observation get ``f = -inf`` and NaN derivatives.
    """
    J = len(offsets) - 1
    xi = float(xi)
    idx = _site_index(offsets)
    mu_o = _expand(offsets, mu)
    tau_o = _expand(offsets, tau)
    z, x, t, L, a, inside, sinv = _core(y, mu_o, tau_o, xi)
    with np.errstate(invalid="ignore", over="ignore", divide="ignore"):
        lp = -tau_o - np.log1p(np.where(inside, x, 0.0)) - L - a
        gz = (a - (1.0 + xi)) / t
        hz = (1.0 + xi) * (xi - a) / (t * t)
    terms = np.stack(
        [
            lp,
            -sinv * gz,
            -1.0 - gz * z,
            sinv * sinv * hz,
            sinv * (hz * z + gz),
            hz * z * z + gz * z,
        ]
    )
    sums = np.zeros((6, J))
    for k in range(6):
        sums[k] = np.bincount(idx, weights=np.where(inside, terms[k], 0.0), minlength=J)
    bad = np.zeros(J, dtype=bool)
    bad[idx[~(inside & np.isfinite(lp))]] = True
    f = sums[0]
    f[bad] = -np.inf
    g = sums[1:3].T.copy()
    h = sums[3:6].T.copy()
    g[bad] = np.nan
    h[bad] = np.nan
    return f, g, h


def _series_dL(z, x):
    """L' and L'' by power series in x = xi*z (valid for small |x|)."""
    d1 = np.zeros_like(x)
    d2 = np.zeros_like(x)
    p = np.ones_like(x)
    for k in range(1, _NSERIES):
        sgn = -1.0 if k % 2 else 1.0
        d1 += sgn * k / (k + 1.0) * p
        p = p * x
    p = np.ones_like(x)
    for k in range(2, _NSERIES + 1):
        sgn = 1.0 if k % 2 == 0 else -1.0
        d2 += sgn * k * (k - 1.0) / (k + 1.0) * p
        p = p * x
    return z * z * d1, z * z * z * d2


def xi_derivs(y, offsets, mu, tau, xi):
    """Total log-likelihood and its first two derivatives in ``xi``.

    Returns ``(-inf, nan, nan)`` if any observation is out of support.
    """
    xi = float(xi)
    mu_o = _expand(offsets, mu)
    tau_o = _expand(offsets, tau)
    z, x, t, L, a, inside, _ = _core(y, mu_o, tau_o, xi)
    if not np.all(inside):
        return -np.inf, np.nan, np.nan
    with np.errstate(over="ignore", invalid="ignore"):
        lp = -tau_o - np.log1p(x) - L - a
        small = np.abs(x) < SERIES_EPS
        s1, s2 = _series_dL(z, np.where(small, x, 0.0))
        safe_xi = xi if xi != 0.0 else 1.0
        c1 = (z / t - L) / safe_xi
        c2 = (-(z * z) / (t * t) - 2.0 * c1) / safe_xi
        d1L = np.where(small, s1, c1)
        d2L = np.where(small, s2, c2)
        d1 = -z / t - d1L * (1.0 - a)
        d2 = (z * z) / (t * t) - d2L * (1.0 - a) - a * d1L * d1L
    f = lp.sum()
    if not np.isfinite(f):
        return -np.inf, np.nan, np.nan
    return float(f), float(d1.sum()), float(d2.sum())
