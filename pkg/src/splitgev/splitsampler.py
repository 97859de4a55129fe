"""Split MCMC sampler for the spatial GEV latent Gaussian model.

One iteration cycles three Metropolis-Hastings blocks:

1. ``(mu, tau)`` at every site: Gaussian proposal around the mode of the
   conditional posterior, built from the Hessian of the site log-likelihood.
   The conditional factorises over sites, so the mode search, the proposal
   and the accept/reject step are all done per site.
2. ``xi``: the same scheme in one dimension.
3. ``(nu, theta)`` jointly: multiplicative random-walk proposal for each
   hyperparameter followed by an exact draw of ``nu`` from its Gaussian full
   conditional.
"""
from __future__ import annotations

import csv
import json
import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy import special

from . import kernels
from .errors import NotPositiveDefiniteError, NumericalError, ValidationError
from .lgm import HYPER_NAMES, LatentState, ModelSpec, check_theta, log_hyperprior

logger = logging.getLogger(__name__)

_LOG2PI = math.log(2.0 * math.pi)


@dataclass
class SamplerConfig:
    n_iter: int = 1000
    n_burnin: int = 0
    n_chains: int = 1
    seed: int = 0
    F: float = 1.3
    newton_tol: float = 1e-8
    newton_max: int = 50
    thin: int = 1
    threads: int = 1
    store_field: bool = True

    def __post_init__(self):
        if not self.n_iter > self.n_burnin >= 0:
            if not (self.n_burnin == 0 and self.n_iter > 0):
                raise ValidationError("need n_iter > n_burnin >= 0")
        if not self.F > 1.0:
            raise ValidationError("scaling proposal bound F must exceed 1")
        if self.n_chains < 1 or self.thin < 1 or self.threads < 1:
            raise ValidationError("n_chains, thin and threads must be >= 1")


# --- scaling-factor proposal --------------------------------------------------


def scaling_normaliser(F: float) -> float:
    return F - 1.0 / F + 2.0 * math.log(F)


def scaling_pdf(f, F: float):
    """Density proportional to ``1 + 1/f`` on ``[1/F, F]``."""
    f = np.asarray(f, dtype=float)
    inside = (f >= 1.0 / F) & (f <= F)
    return np.where(inside, (1.0 + 1.0 / f) / scaling_normaliser(F), 0.0)


def scaling_cdf(f, F: float):
    f = np.clip(np.asarray(f, dtype=float), 1.0 / F, F)
    return (f - 1.0 / F + np.log(f) + math.log(F)) / scaling_normaliser(F)


def sample_scaling(F: float, size, rng: np.random.Generator):
    """Inverse-CDF draws: solve ``f + log f = c`` with the Lambert W function."""
    u = rng.uniform(size=size)
    c = u * scaling_normaliser(F) + 1.0 / F - math.log(F)
    return np.real(special.lambertw(np.exp(c)))


def theta_propose(theta, F: float, rng: np.random.Generator) -> np.ndarray:
    theta = np.asarray(theta, dtype=float)
    return theta * sample_scaling(F, theta.shape, rng)


def theta_proposal_logdensity(theta_new, theta_old, F: float) -> float:
    """``log q(theta_new | theta_old)`` for independent scaling of each component."""
    a = np.asarray(theta_new, dtype=float)
    b = np.asarray(theta_old, dtype=float)
    f = a / b
    dens = scaling_pdf(f, F) / b
    with np.errstate(divide="ignore"):
        return float(np.sum(np.log(dens)))


# --- block 1: (mu, tau) -------------------------------------------------------


def _clip_pd(p11, p12, p22, floor):
    """Eigenvalue-clipped copy of symmetric 2x2 matrices so that they are PD."""
    tr = 0.5 * (p11 + p22)
    disc = np.sqrt(0.25 * (p11 - p22) ** 2 + p12**2)
    l1 = tr + disc
    l2 = tr - disc
    need = (l2 < floor) | ~np.isfinite(l2)
    if not np.any(need):
        return p11, p12, p22
    # eigenvector for l1: (p12, l1 - p11) or (l1 - p22, p12)
    v1 = np.where(np.abs(p12) > 0, p12, np.where(p11 >= p22, 1.0, 0.0))
    v2 = np.where(np.abs(p12) > 0, l1 - p11, np.where(p11 >= p22, 0.0, 1.0))
    nrm = np.hypot(v1, v2)
    nrm = np.where(nrm > 0, nrm, 1.0)
    v1, v2 = v1 / nrm, v2 / nrm
    a = np.maximum(np.abs(l1), floor)
    b = np.maximum(np.where(np.isfinite(l2), np.abs(l2), floor), floor)
    q11 = a * v1 * v1 + b * v2 * v2
    q12 = (a - b) * v1 * v2
    q22 = a * v2 * v2 + b * v1 * v1
    return np.where(need, q11, p11), np.where(need, q12, p12), np.where(need, q22, p22)


def eta_mode(data, mu0, tau0, m_mu, m_tau, k_mu, k_tau, xi, tol=1e-8, maxit=50):
    """Per-site maximiser of ``f_i(mu, tau) - k_mu/2 (mu-m_mu)^2 - k_tau/2 (tau-m_tau)^2``.

    Damped Newton with eigenvalue clipping and step halving. Returns
    ``(mu, tau, converged)``. With ``k_mu = k_tau = 0`` this is site-wise
    maximum likelihood.
    """
    y, off = data.y, data.offsets
    mu = np.array(mu0, dtype=float)
    tau = np.array(tau0, dtype=float)
    J = len(mu)
    k_mu = np.broadcast_to(np.asarray(k_mu, float), (J,))
    k_tau = np.broadcast_to(np.asarray(k_tau, float), (J,))
    m_mu = np.broadcast_to(np.asarray(m_mu, float), (J,))
    m_tau = np.broadcast_to(np.asarray(m_tau, float), (J,))

    def phi(f, a, b):
        return f - 0.5 * k_mu * (a - m_mu) ** 2 - 0.5 * k_tau * (b - m_tau) ** 2

    f, g, h = kernels.site_derivs(y, off, mu, tau, xi)
    if not np.all(np.isfinite(f)):
        raise NumericalError("mode search started outside the GEV support")
    conv = np.zeros(J, dtype=bool)
    for _ in range(maxit):
        g1 = g[:, 0] + k_mu * (m_mu - mu)
        g2 = g[:, 1] + k_tau * (m_tau - tau)
        conv = np.maximum(np.abs(g1), np.abs(g2)) < tol
        act = np.flatnonzero(~conv)
        if act.size == 0:
            break
        p11 = k_mu[act] - h[act, 0]
        p12 = -h[act, 1]
        p22 = k_tau[act] - h[act, 2]
        scale = np.maximum(np.abs(p11) + np.abs(p22), 1e-12)
        p11, p12, p22 = _clip_pd(p11, p12, p22, 1e-8 * scale)
        det = p11 * p22 - p12 * p12
        d1 = (p22 * g1[act] - p12 * g2[act]) / det
        d2 = (p11 * g2[act] - p12 * g1[act]) / det
        phi0 = phi(f, mu, tau)[act]
        step = np.ones(act.size)
        pending = np.ones(act.size, dtype=bool)
        for _ls in range(60):
            idx = act[pending]
            cmu = mu[idx] + step[pending] * d1[pending]
            ctau = tau[idx] + step[pending] * d2[pending]
            sub = _SubData(data, idx)
            fc = kernels.site_loglik(sub.y, sub.offsets, cmu, ctau, xi)
            pc = fc - 0.5 * k_mu[idx] * (cmu - m_mu[idx]) ** 2 - 0.5 * k_tau[idx] * (ctau - m_tau[idx]) ** 2
            ok = np.isfinite(pc) & (pc >= phi0[pending] - 1e-12 * np.abs(phi0[pending]))
            where = np.flatnonzero(pending)
            good = where[ok]
            mu[act[good]] = cmu[ok]
            tau[act[good]] = ctau[ok]
            pending[good] = False
            if not pending.any():
                break
            step[pending] *= 0.5
        f, g, h = kernels.site_derivs(y, off, mu, tau, xi)
        if pending.any():
            # no ascent possible along the Newton direction: stationary to rounding
            stuck = act[pending]
            conv[stuck] = True
    g1 = g[:, 0] + k_mu * (m_mu - mu)
    g2 = g[:, 1] + k_tau * (m_tau - tau)
    conv = np.maximum(np.abs(g1), np.abs(g2)) < tol
    return mu, tau, conv


class _SubData:
    """Observations of a subset of sites, regrouped."""

    def __init__(self, data, idx):
        off = data.offsets
        starts = off[idx]
        ends = off[idx + 1]
        counts = ends - starts
        self.offsets = np.concatenate([[0], np.cumsum(counts)]).astype(np.int64)
        if counts.sum():
            pos = np.concatenate([np.arange(s, e) for s, e in zip(starts, ends)])
            self.y = data.y[pos]
        else:
            self.y = np.zeros(0)


@dataclass
class EtaUpdate:
    mu: np.ndarray
    tau: np.ndarray
    accepted: np.ndarray
    failed: np.ndarray


def eta_block_update(state: LatentState, theta, model: ModelSpec, rng: np.random.Generator,
                     tol: float = 1e-8, maxit: int = 50) -> EtaUpdate:
    """Independent per-site MH update of ``(mu_i, tau_i)`` given ``xi, nu, theta``."""
    data = model.data
    xi = state.xi
    nu = state.nu()
    m_mu, m_tau = model.prior_means(nu)
    k_mu, k_tau = float(theta[4]), float(theta[5])
    J = model.J
    mu_k, tau_k = state.mu, state.tau
    mu0, tau0, conv = eta_mode(data, mu_k, tau_k, m_mu, m_tau, k_mu, k_tau, xi, tol, maxit)
    f0, g, h = kernels.site_derivs(data.y, data.offsets, mu0, tau0, xi)
    h11, h12, h22 = h[:, 0], h[:, 1], h[:, 2]
    b1 = g[:, 0] - (h11 * mu0 + h12 * tau0)
    b2 = g[:, 1] - (h12 * mu0 + h22 * tau0)
    p11 = k_mu - h11
    p12 = -h12
    p22 = k_tau - h22
    det = p11 * p22 - p12 * p12
    usable = np.isfinite(f0) & (p11 > 0) & (det > 0) & np.isfinite(det)
    failed = ~usable
    if failed.any():
        logger.warning("eta block: %d site(s) without a usable Gaussian approximation", int(failed.sum()))
    sp11 = np.where(usable, p11, 1.0)
    sp12 = np.where(usable, p12, 0.0)
    sp22 = np.where(usable, p22, 1.0)
    sdet = np.where(usable, det, 1.0)
    r1 = k_mu * m_mu + np.where(usable, b1, 0.0)
    r2 = k_tau * m_tau + np.where(usable, b2, 0.0)
    mean1 = (sp22 * r1 - sp12 * r2) / sdet
    mean2 = (sp11 * r2 - sp12 * r1) / sdet
    l11 = np.sqrt(sp11)
    l21 = sp12 / l11
    l22 = np.sqrt(np.maximum(sp22 - l21 * l21, 1e-300))
    z = rng.standard_normal((J, 2))
    x2 = z[:, 1] / l22
    x1 = (z[:, 0] - l21 * x2) / l11
    mu_s = mean1 + x1
    tau_s = mean2 + x2

    def corrected(f, a, c):
        quad = h11 * a * a + 2.0 * h12 * a * c + h22 * c * c
        return f - 0.5 * quad - (b1 * a + b2 * c)

    f_s = kernels.site_loglik(data.y, data.offsets, mu_s, tau_s, xi)
    f_k = kernels.site_loglik(data.y, data.offsets, mu_k, tau_k, xi)
    with np.errstate(invalid="ignore"):
        r = corrected(f_s, mu_s, tau_s) - corrected(f_k, mu_k, tau_k)
    r = np.where(np.isfinite(f_s) & usable, r, -np.inf)
    logu = np.log1p(-rng.uniform(size=J))
    acc = logu < r
    return EtaUpdate(np.where(acc, mu_s, mu_k), np.where(acc, tau_s, tau_k), acc, failed)


# --- block 2: xi --------------------------------------------------------------


def _xi_phi(data, mu, tau, xi, kappa_xi):
    f, d1, d2 = kernels.xi_derivs(data.y, data.offsets, mu, tau, xi)
    return f - 0.5 * kappa_xi * xi * xi, f, d1, d2


def xi_mode(data, mu, tau, xi0, kappa_xi, tol=1e-8, maxit=50):
    xi = float(xi0)
    phi, f, d1, d2 = _xi_phi(data, mu, tau, xi, kappa_xi)
    if not np.isfinite(phi):
        raise NumericalError("xi mode search started outside the GEV support")
    for _ in range(maxit):
        grad = d1 - kappa_xi * xi
        if abs(grad) < tol:
            break
        curv = kappa_xi - d2
        step = grad / curv if curv > 0 else math.copysign(min(abs(grad) / kappa_xi, 0.05), grad)
        moved = False
        for _ls in range(60):
            cand = xi + step
            pc, fc, c1, c2 = _xi_phi(data, mu, tau, cand, kappa_xi)
            if np.isfinite(pc) and pc >= phi - 1e-12 * abs(phi):
                xi, phi, f, d1, d2 = cand, pc, fc, c1, c2
                moved = True
                break
            step *= 0.5
        if not moved:
            break
    return xi, f, d1, d2


def xi_block_update(state: LatentState, model: ModelSpec, rng: np.random.Generator,
                    tol: float = 1e-8, maxit: int = 50):
    """MH update of the shape parameter. Returns ``(xi, accepted)``."""
    data = model.data
    kx = model.priors.kappa_xi
    xi_k = state.xi
    xi0, f0, d1, d2 = xi_mode(data, state.mu, state.tau, xi_k, kx, tol, maxit)
    prec = kx - d2
    if not (prec > 0 and np.isfinite(prec)):
        logger.warning("xi block: non-positive proposal precision %.3g, rejecting", prec)
        return xi_k, False
    b = d1 - d2 * xi0
    mean = b / prec
    xi_s = mean + rng.standard_normal() / math.sqrt(prec)

    def rho(x):
        return (-0.5 * d2 * x - b) * x

    fs = kernels.xi_derivs(data.y, data.offsets, state.mu, state.tau, xi_s)[0]
    fk = kernels.xi_derivs(data.y, data.offsets, state.mu, state.tau, xi_k)[0]
    if not np.isfinite(fs):
        return xi_k, False
    r = fs + rho(xi_s) - (fk + rho(xi_k))
    if math.log1p(-rng.uniform()) < r:
        return float(xi_s), True
    return xi_k, False


# --- block 3: (nu, theta) -----------------------------------------------------


class ThetaTerms:
    """Everything about ``theta`` that the joint block needs, factorised once."""

    def __init__(self, model: ModelSpec, theta, qu_an, qc_an):
        self.theta = check_theta(theta)
        km, wm, kt, wt = self.theta[:4]
        pr = model.priors
        self.Qu_mu = model.Qu(km, wm)
        self.Qu_tau = model.Qu(kt, wt)
        ld_mu = qu_an.factor(self.Qu_mu).logdet()
        ld_tau = qu_an.factor(self.Qu_tau).logdet()
        p = model.p
        self.logdet_Qnu = p * math.log(pr.kappa_beta_mu) + p * math.log(pr.kappa_beta_tau) + ld_mu + ld_tau
        self.Qc = model.Qc(self.theta)
        self.Fc = qc_an.factor(self.Qc)
        self.logdet_Qc = self.Fc.logdet()
        self.log_prior = log_hyperprior(self.theta, pr)


def log_eta_given_nu(model: ModelSpec, theta, mu, tau, xi, nu) -> float:
    """``log N(eta; Z nu, Q_eps^{-1})``."""
    J = model.J
    vm, vt = theta[4], theta[5]
    rm = mu - model.Z_mu @ nu
    rt = tau - model.Z_tau @ nu
    kx = model.priors.kappa_xi
    return float(
        0.5 * (J * math.log(vm) + J * math.log(vt) + math.log(kx))
        - 0.5 * (2 * J + 1) * _LOG2PI
        - 0.5 * (vm * rm @ rm + vt * rt @ rt + kx * xi * xi)
    )


def log_nu_prior(model: ModelSpec, terms: ThetaTerms, nu) -> float:
    """``log N(nu; 0, Q_nu^{-1})``."""
    s_bm, s_um, s_bt, s_ut = model.nu_slices()
    pr = model.priors
    um, ut = nu[s_um], nu[s_ut]
    quad = (
        pr.kappa_beta_mu * nu[s_bm] @ nu[s_bm]
        + um @ (terms.Qu_mu @ um)
        + pr.kappa_beta_tau * nu[s_bt] @ nu[s_bt]
        + ut @ (terms.Qu_tau @ ut)
    )
    return float(0.5 * terms.logdet_Qnu - 0.5 * len(nu) * _LOG2PI - 0.5 * quad)


def log_nu_given_eta(terms: ThetaTerms, nu, cond_mean) -> float:
    """``log N(nu; Q_c^{-1} Z' Q_eps eta, Q_c^{-1})``."""
    r = nu - cond_mean
    return float(0.5 * terms.logdet_Qc - 0.5 * len(nu) * _LOG2PI - 0.5 * r @ (terms.Qc @ r))


@dataclass
class NuThetaUpdate:
    nu: np.ndarray
    theta: np.ndarray
    accepted: bool
    terms: ThetaTerms | None
    log_ratio: float
    factor_failed: bool = False
    nu_proposed: np.ndarray | None = None
    theta_proposed: np.ndarray | None = None


def nu_theta_block_update(state: LatentState, theta, model: ModelSpec, rng: np.random.Generator,
                          F: float = 1.3, analyses=None, current: ThetaTerms | None = None,
                          theta_star=None) -> NuThetaUpdate:
    """Joint MH update of ``(nu, theta)`` given ``eta``.

    ``analyses`` is ``(qu_analysis, qc_analysis)``; ``current`` caches the
    terms for the current ``theta``. ``theta_star`` overrides the proposal
    (for testing).
    """
    qu_an, qc_an = analyses if analyses is not None else (model.qu_analysis(), model.qc_analysis())
    theta = np.asarray(theta, dtype=float)
    if current is None or not np.array_equal(current.theta, theta):
        current = ThetaTerms(model, theta, qu_an, qc_an)
    if theta_star is None:
        theta_star = theta_propose(theta, F, rng)
    mu, tau, xi = state.mu, state.tau, state.xi
    nu_k = state.nu()
    try:
        prop = ThetaTerms(model, theta_star, qu_an, qc_an)
    except NotPositiveDefiniteError:
        logger.warning("theta proposal %s gives a non-PD precision, rejecting", theta_star)
        return NuThetaUpdate(nu_k, theta, False, current, -math.inf, True, None, np.asarray(theta_star))
    b_s = model.Zt_Qeps_eta(prop.theta, mu, tau)
    mean_s = prop.Fc.solve(b_s)
    nu_s = mean_s + prop.Fc.solve_Lt(rng.standard_normal(len(nu_k)))
    b_k = model.Zt_Qeps_eta(current.theta, mu, tau)
    mean_k = current.Fc.solve(b_k)
    new = (
        log_eta_given_nu(model, prop.theta, mu, tau, xi, nu_s)
        + log_nu_prior(model, prop, nu_s)
        - log_nu_given_eta(prop, nu_s, mean_s)
    )
    old = (
        log_eta_given_nu(model, current.theta, mu, tau, xi, nu_k)
        + log_nu_prior(model, current, nu_k)
        - log_nu_given_eta(current, nu_k, mean_k)
    )
    log_r = prop.log_prior - current.log_prior + new - old
    if math.log1p(-rng.uniform()) < log_r:
        return NuThetaUpdate(nu_s, prop.theta.copy(), True, prop, log_r, False, nu_s, prop.theta)
    return NuThetaUpdate(nu_k, theta, False, current, log_r, False, nu_s, prop.theta)


# --- initialisation -----------------------------------------------------------


def site_ml(data, xi: float = 0.1):
    """Site-wise ML ``(mu, tau)`` at fixed ``xi``; sites with < 3 values get pooled moments."""
    J = data.n_sites
    counts = data.counts
    mu0 = np.zeros(J)
    tau0 = np.zeros(J)
    pooled = data.y if len(data.y) else np.array([1.0])
    for i in range(J):
        v = data.site(i) if counts[i] >= 3 else pooled
        s = max(float(np.std(v)) * math.sqrt(6.0) / math.pi, 1e-3 * max(1.0, abs(float(np.mean(v)))))
        mu0[i] = float(np.mean(v)) - 0.5772 * s
        tau0[i] = math.log(s)
    f = kernels.site_loglik(data.y, data.offsets, mu0, tau0, xi)
    for i in np.flatnonzero(~np.isfinite(f)):
        v = data.site(i)
        tau0[i] = math.log(max(np.ptp(v), 1.0))
        mu0[i] = float(np.min(v)) + math.exp(tau0[i])
    mu, tau, _ = eta_mode(data, mu0, tau0, 0.0, 0.0, 0.0, 0.0, xi, tol=1e-8, maxit=100)
    return mu, tau


def _wls(X, y, w):
    sw = np.sqrt(w)
    coef, *_ = np.linalg.lstsq(X * sw[:, None], y * sw, rcond=None)
    return coef


def initial_state(model: ModelSpec, chain: int = 0, rng: np.random.Generator | None = None):
    """Starting ``(LatentState, theta)``.

    Chain 0: regression coefficients by weighted least squares of site-wise
    ML estimates on the covariates, spatial effects zero, site parameters at
    their ML estimates (the regression fit for sites with fewer than three
    values), ``xi = 0.1``, ``theta`` at the prior medians. Other
    chains perturb this start (``theta`` drawn from its prior, jittered
    coefficients and ``xi``) so that between-chain diagnostics are
    informative.
    """
    data = model.data
    counts = data.counts.astype(float)
    mu_hat, tau_hat = site_ml(data, 0.1)
    w = np.where(counts >= 3, counts, 0.0)
    if w.sum() < model.p:
        w = np.ones_like(w)
    beta_mu = _wls(model.X_mu, mu_hat, w)
    beta_tau = _wls(model.X_tau, tau_hat, w)
    theta = model.priors.medians()
    xi = 0.1
    if chain > 0:
        rng = rng if rng is not None else np.random.default_rng(chain)
        theta = theta * np.exp(np.asarray(model.priors.log_sd) * rng.standard_normal(6))
        xi = 0.1 + 0.05 * rng.uniform(-1, 1)
        resid_mu = np.sqrt(np.average((mu_hat - model.X_mu @ beta_mu) ** 2, weights=w) + 1e-12)
        resid_tau = np.sqrt(np.average((tau_hat - model.X_tau @ beta_tau) ** 2, weights=w) + 1e-12)
        beta_mu = beta_mu + np.r_[resid_mu * rng.standard_normal(), np.zeros(model.p - 1)]
        beta_tau = beta_tau + np.r_[resid_tau * rng.standard_normal(), np.zeros(model.p - 1)]
    # Sites with enough data start at their ML estimates: the mu/tau update
    # is an independence proposal, and a start deep in the tail of the
    # conditional posterior can be rejected for a very long time.
    informative = counts >= 3
    mu = np.where(informative, mu_hat, model.X_mu @ beta_mu)
    tau = np.where(informative, tau_hat, model.X_tau @ beta_tau)
    f = kernels.site_loglik(data.y, data.offsets, mu, tau, xi)
    bad = ~np.isfinite(f)
    mu[bad], tau[bad] = mu_hat[bad], tau_hat[bad]
    if not np.isfinite(kernels.xi_derivs(data.y, data.offsets, mu, tau, xi)[0]):
        xi = 0.1
        mu, tau = site_ml(data, xi)
    state = LatentState(mu, tau, xi, beta_mu, np.zeros(model.n), beta_tau, np.zeros(model.n))
    return state, theta


# --- traces -------------------------------------------------------------------


def trace_names(model: ModelSpec, store_field: bool = True) -> list[str]:
    J, p, n = model.J, model.p, model.n
    names = [f"mu_{i + 1}" for i in range(J)] + [f"tau_{i + 1}" for i in range(J)] + ["xi"]
    names += [f"beta_mu_{k + 1}" for k in range(p)]
    if store_field:
        names += [f"u_mu_{k + 1}" for k in range(n)]
    names += [f"beta_tau_{k + 1}" for k in range(p)]
    if store_field:
        names += [f"u_tau_{k + 1}" for k in range(n)]
    return names + list(HYPER_NAMES)


def _record(state: LatentState, theta, store_field: bool) -> np.ndarray:
    parts = [state.mu, state.tau, [state.xi], state.beta_mu]
    if store_field:
        parts.append(state.u_mu)
    parts.append(state.beta_tau)
    if store_field:
        parts.append(state.u_tau)
    parts.append(theta)
    return np.concatenate(parts)


@dataclass
class ChainTrace:
    names: list
    samples: np.ndarray
    meta: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.samples)

    def index(self, name: str) -> int:
        return self.names.index(name)

    def column(self, name: str) -> np.ndarray:
        return self.samples[:, self.index(name)]

    def block(self, prefix: str) -> np.ndarray:
        """Columns ``prefix_1, prefix_2, ...`` as an ``(n_records, k)`` array."""
        cols = [i for i, nm in enumerate(self.names) if nm.rsplit("_", 1)[0] == prefix and nm[len(prefix) + 1 :].isdigit()]
        return self.samples[:, cols]

    @property
    def acceptance(self) -> dict:
        return self.meta.get("acceptance", {})


class TraceWriter:
    """Appends trace rows to CSV in chunks; metadata goes to a JSON sidecar."""

    def __init__(self, path, names, chunk: int = 500):
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self._fh = open(self.path, "w", newline="")
        self._w = csv.writer(self._fh)
        self._w.writerow(names)
        self._buf = []
        self.chunk = chunk

    def append(self, row):
        self._buf.append(row)
        if len(self._buf) >= self.chunk:
            self.flush()

    def flush(self):
        for row in self._buf:
            self._w.writerow([repr(float(v)) for v in row])
        self._buf.clear()
        self._fh.flush()

    def close(self, meta: dict | None = None):
        self.flush()
        self._fh.close()
        if meta is not None:
            meta_path(self.path).write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")


def meta_path(trace_path) -> Path:
    p = Path(trace_path)
    return p.with_name(p.stem + ".meta.json")


def read_trace(path) -> ChainTrace:
    path = Path(path)
    with open(path, newline="") as fh:
        names = next(csv.reader(fh))
    samples = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    if samples.size == 0:
        samples = np.zeros((0, len(names)))
    mp = meta_path(path)
    meta = json.loads(mp.read_text()) if mp.exists() else {}
    return ChainTrace(names, samples, meta)


# --- orchestration ------------------------------------------------------------


def run_chain(config: SamplerConfig, model: ModelSpec, chain: int = 0, init=None,
              trace_path=None, backend: str | None = None) -> ChainTrace:
    """Run one chain; deterministic given ``(config.seed, chain)``."""
    rng = np.random.default_rng(config.seed + chain)
    if init is None:
        state, theta = initial_state(model, chain, np.random.default_rng([config.seed, chain, 7]))
    else:
        state, theta = init
        state = state.copy()
        theta = np.asarray(theta, dtype=float).copy()
    analyses = (model.qu_analysis(backend), model.qc_analysis(backend))
    names = trace_names(model, config.store_field)
    writer = TraceWriter(trace_path, names) if trace_path is not None else None
    rows = []
    acc_eta = np.zeros(model.J)
    acc_xi = 0
    acc_nt = 0
    counters = {"eta_failed_sites": 0, "theta_factor_failures": 0}
    terms = None
    error = None
    it = 0
    try:
        for it in range(config.n_iter):
            up = eta_block_update(state, theta, model, rng, config.newton_tol, config.newton_max)
            state.mu, state.tau = up.mu, up.tau
            acc_eta += up.accepted
            counters["eta_failed_sites"] += int(up.failed.sum())
            state.xi, a = xi_block_update(state, model, rng, config.newton_tol, config.newton_max)
            acc_xi += a
            nt = nu_theta_block_update(state, theta, model, rng, config.F, analyses, terms)
            terms = nt.terms
            counters["theta_factor_failures"] += nt.factor_failed
            if nt.accepted:
                state = state.with_nu(nt.nu, model.p, model.n)
                theta = nt.theta
            acc_nt += nt.accepted
            if it % config.thin == 0:
                row = _record(state, theta, config.store_field)
                rows.append(row)
                if writer is not None:
                    writer.append(row)
        it = config.n_iter
    except (NumericalError, FloatingPointError, np.linalg.LinAlgError) as exc:
        error = f"iteration {it}: {type(exc).__name__}: {exc}"
        logger.error("chain %d aborted at %s", chain, error)
    done = max(it, 1)
    meta = {
        "chain": chain,
        "seed": config.seed,
        "rng_seed": config.seed + chain,
        "config": asdict(config),
        "iterations_completed": it,
        "acceptance": {
            "eta_mean": float(np.mean(acc_eta) / done),
            "eta_per_site": (acc_eta / done).tolist(),
            "xi": acc_xi / done,
            "nu_theta": acc_nt / done,
        },
        "counters": counters,
        "kernel_backend": kernels.BACKEND,
        "error": error,
    }
    if writer is not None:
        writer.close(meta)
    samples = np.array(rows) if rows else np.zeros((0, len(names)))
    return ChainTrace(names, samples, meta)


def _run_chain_job(args):
    config, model, chain, path = args
    return run_chain(config, model, chain, trace_path=path)


def run_chains(config: SamplerConfig, model: ModelSpec, out_dir=None) -> list[ChainTrace]:
    """Independent chains seeded ``seed + chain``; up to ``config.threads`` processes."""
    paths = [
        (Path(out_dir) / f"chain_{c}.csv") if out_dir is not None else None
        for c in range(config.n_chains)
    ]
    jobs = [(config, model, c, paths[c]) for c in range(config.n_chains)]
    workers = min(config.threads, config.n_chains, os.cpu_count() or 1)
    if workers <= 1:
        return [_run_chain_job(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(_run_chain_job, jobs))
