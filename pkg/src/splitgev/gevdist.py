"""Generalized extreme value distribution with log-scale parameter.

The scale is carried as ``tau = log(sigma)``. For ``|xi| < GUMBEL_EPS`` the
Gumbel limit is used, with a first-order correction in ``xi`` so values stay
continuous across the switch.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import special

from . import kernels
from .errors import DomainError, SupportError

GUMBEL_EPS = 1e-8
EULER_GAMMA = float(np.euler_gamma)


@dataclass(frozen=True)
class GevParams:
    """Location ``mu``, log-scale ``tau`` and shape ``xi``."""

    mu: float
    tau: float
    xi: float

    def __post_init__(self):
        for name in ("mu", "tau", "xi"):
            if not math.isfinite(getattr(self, name)):
                raise DomainError(f"GEV parameter {name} must be finite")

    @property
    def sigma(self) -> float:
        return math.exp(self.tau)

    def in_support(self, y) -> np.ndarray:
        return 1.0 + self.xi * (np.asarray(y, float) - self.mu) / self.sigma > 0.0


def _check_finite(y):
    y = np.asarray(y, dtype=float)
    if not np.all(np.isfinite(y)):
        raise DomainError("non-finite argument")
    return y


def gev_logpdf(y, p: GevParams):
    """Log-density; ``-inf`` outside the support."""
    y = _check_finite(y)
    out = kernels.logpdf(y, p.mu, p.tau, p.xi)
    return float(out) if out.ndim == 0 else out


def gev_cdf(y, p: GevParams):
    y = _check_finite(y)
    z = (y - p.mu) / p.sigma
    t = 1.0 + p.xi * z
    with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
        if abs(p.xi) < GUMBEL_EPS:
            L = z - 0.5 * p.xi * z * z
        else:
            L = np.log1p(np.where(t > 0, p.xi * z, 0.0)) / p.xi
        out = np.exp(-np.exp(-L))
    outside = 0.0 if p.xi > 0 else 1.0
    out = np.where(t > 0, out, outside)
    return float(out) if out.ndim == 0 else out


def _check_prob(prob):
    prob = np.asarray(prob, dtype=float)
    if not np.all((prob > 0.0) & (prob < 1.0)):
        raise DomainError("probability must lie in (0, 1)")
    return prob


def gev_quantile(prob, p: GevParams):
    """Inverse of :func:`gev_cdf`."""
    prob = _check_prob(prob)
    s = -np.log(-np.log(prob))
    if abs(p.xi) < GUMBEL_EPS:
        w = s + 0.5 * p.xi * s * s
    else:
        w = np.expm1(p.xi * s) / p.xi
    out = p.mu + p.sigma * w
    return float(out) if out.ndim == 0 else out


def quantile_array(prob: float, mu, tau, xi):
    """Vectorised quantile over arrays of ``mu``/``tau`` with scalar ``xi``."""
    _check_prob(prob)
    s = -math.log(-math.log(prob))
    if abs(xi) < GUMBEL_EPS:
        w = s + 0.5 * xi * s * s
    else:
        w = math.expm1(xi * s) / xi
    return np.asarray(mu) + np.exp(np.asarray(tau)) * w


def gev_mean(p: GevParams) -> float:
    if p.xi >= 1.0:
        raise DomainError(f"GEV mean undefined for xi={p.xi} >= 1")
    if abs(p.xi) < GUMBEL_EPS:
        c = EULER_GAMMA + (0.5 * EULER_GAMMA**2 + math.pi**2 / 12.0) * p.xi
    else:
        c = (special.gamma(1.0 - p.xi) - 1.0) / p.xi
    return p.mu + p.sigma * c


def site_loglik(y_site, p: GevParams) -> float:
    y = _check_finite(y_site).ravel()
    if y.size == 0:
        return 0.0
    off = np.array([0, y.size])
    return float(kernels.site_loglik(y, off, [p.mu], [p.tau], p.xi)[0])


def site_loglik_grad_hess(y_site, p: GevParams):
    """Gradient and Hessian of :func:`site_loglik` in ``(mu, tau)`` at fixed ``xi``.

    Raises
    ------
    SupportError
        If any observation lies outside the support.
    """
    y = _check_finite(y_site).ravel()
    if y.size == 0:
        return np.zeros(2), np.zeros((2, 2))
    off = np.array([0, y.size])
    f, g, h = kernels.site_derivs(y, off, [p.mu], [p.tau], p.xi)
    if not np.isfinite(f[0]):
        raise SupportError("observation outside GEV support")
    hm = h[0]
    return g[0].copy(), np.array([[hm[0], hm[1]], [hm[1], hm[2]]])


def loglik_dxi_d2xi(y, offsets, mu, tau, xi):
    """First and second derivative in ``xi`` of the total log-likelihood.

    ``y`` is the flat observation vector grouped by site with ``offsets``
    delimiting sites; ``mu``/``tau`` are per-site.
    """
    f, d1, d2 = kernels.xi_derivs(_check_finite(y), offsets, mu, tau, xi)
    if not np.isfinite(f):
        raise SupportError("observation outside GEV support")
    return d1, d2


def total_loglik(y, offsets, mu, tau, xi) -> float:
    """Total log-likelihood over all sites (``-inf`` if any point is out of support)."""
    return float(np.sum(kernels.site_loglik(y, offsets, mu, tau, xi)))


def gev_sample(p: GevParams, size, rng: np.random.Generator):
    u = rng.uniform(size=size)
    u = np.clip(u, np.finfo(float).tiny, 1.0 - np.finfo(float).epsneg)
    return gev_quantile(u, p)
