"""Independent reference implementations used as test oracles.

Nothing here calls the package's likelihood kernels or sparse solvers:
GEV densities come from ``scipy.stats.genextreme`` and linear algebra is
dense numpy.
"""
from __future__ import annotations

import math

import numpy as np
from scipy import stats


def genextreme_logpdf(y, mu, tau, xi):
    """GEV log-density via scipy (its shape is ``c = -xi``)."""
    return stats.genextreme.logpdf(y, c=-xi, loc=mu, scale=np.exp(tau))


def dense_spde_precision(C, G, kappa, omega):
    C = np.asarray(C.todense() if hasattr(C, "todense") else C)
    G = np.asarray(G.todense() if hasattr(G, "todense") else G)
    Ci = np.diag(1.0 / np.diag(C))
    return omega**2 * (kappa**4 * C + 2 * kappa**2 * G + G @ Ci @ G)


def dense_normal_logpdf(x, mean, Q):
    r = np.asarray(x) - np.asarray(mean)
    sign, ld = np.linalg.slogdet(Q)
    assert sign > 0
    return 0.5 * ld - 0.5 * len(r) * math.log(2 * math.pi) - 0.5 * r @ Q @ r


def lognormal_logpdf(theta, m, s):
    lt = np.log(theta)
    return np.sum(-lt - np.log(s * math.sqrt(2 * math.pi)) - 0.5 * ((lt - m) / s) ** 2, axis=-1)


class MarginalPosterior:
    """Log posterior of ``(mu, tau, xi, log theta)`` with ``nu`` integrated out.

    Given ``theta`` the site parameters are Gaussian with covariances
    ``X X'/kappa_beta + A Qu^{-1} A' + I/kappa_v``. Evaluates many states at
    once (leading batch axis).
    """

    def __init__(self, X_mu, X_tau, A, C, G, y_sites, priors):
        self.Xm = np.asarray(X_mu, float)
        self.Xt = np.asarray(X_tau, float)
        self.A = np.asarray(A.todense() if hasattr(A, "todense") else A, float)
        self.C = np.asarray(C.todense(), float)
        self.G = np.asarray(G.todense(), float)
        self.Ci = np.diag(1.0 / np.diag(self.C))
        self.K = self.G @ self.Ci @ self.G
        self.y = [np.asarray(v, float) for v in y_sites]
        self.pr = priors
        self.J = len(self.y)

    def _field_cov(self, kappa, omega):
        k2 = kappa[:, None, None] ** 2
        Q = omega[:, None, None] ** 2 * (k2 * k2 * self.C + 2 * k2 * self.G + self.K)
        S = np.linalg.inv(Q)
        return self.A @ S @ self.A.T

    def logpost(self, state):
        """``state`` columns: mu_1..J, tau_1..J, xi, log theta (6)."""
        s = np.atleast_2d(state)
        J = self.J
        mu, tau, xi = s[:, :J], s[:, J : 2 * J], s[:, 2 * J]
        lt = s[:, 2 * J + 1 :]
        th = np.exp(lt)
        pr = self.pr
        out = lognormal_logpdf(th, np.asarray(pr.log_mean), np.asarray(pr.log_sd)) + lt.sum(axis=1)
        out = out - 0.5 * pr.kappa_xi * xi**2 + 0.5 * math.log(pr.kappa_xi / (2 * math.pi))
        I = np.eye(J)
        Sm = self.Xm @ self.Xm.T / pr.kappa_beta_mu + self._field_cov(th[:, 0], th[:, 1]) + I / th[:, 4, None, None]
        St = self.Xt @ self.Xt.T / pr.kappa_beta_tau + self._field_cov(th[:, 2], th[:, 3]) + I / th[:, 5, None, None]
        for S, v in ((Sm, mu), (St, tau)):
            sign, ld = np.linalg.slogdet(S)
            sol = np.linalg.solve(S, v[:, :, None])[:, :, 0]
            out = out - 0.5 * ld - 0.5 * np.sum(v * sol, axis=1) - 0.5 * J * math.log(2 * math.pi)
        for i in range(J):
            ll = genextreme_logpdf(self.y[i][None, :], mu[:, i, None], tau[:, i, None], xi[:, None])
            out = out + np.sum(ll, axis=1)
        out = np.where(np.isfinite(out), out, -np.inf)
        return out


def random_walk_metropolis(logpost, start, n_keep, thin, burn, rng, adapt_every=500, init_cov=None):
    """Vectorised RWM over independent chains (rows of ``start``).

    The Gaussian proposal covariance adapts to the pooled chain history
    during burn-in only, then stays fixed. Returns ``(draws, accept_rate)``
    with ``draws`` of shape ``(n_chains * n_keep, dim)``.
    """
    x = np.array(start, dtype=float)
    m, d = x.shape
    lp = logpost(x)
    cov = np.diag(np.full(d, 1e-4)) if init_cov is None else np.asarray(init_cov, float)
    scale = 2.38**2 / d
    hist = []
    L = np.linalg.cholesky(cov * scale)
    acc = 0
    total = 0
    keep = []
    for it in range(burn + n_keep * thin):
        prop = x + rng.standard_normal((m, d)) @ L.T
        lpp = logpost(prop)
        ok = np.log(rng.uniform(size=m)) < lpp - lp
        x[ok] = prop[ok]
        lp[ok] = lpp[ok]
        if it < burn:
            hist.append(x.copy())
            if (it + 1) % adapt_every == 0:
                h = np.concatenate(hist[len(hist) // 2 :])
                cov = np.cov(h.T) + 1e-10 * np.eye(d)
                L = np.linalg.cholesky(cov * scale)
        else:
            acc += ok.sum()
            total += m
            if (it - burn) % thin == thin - 1:
                keep.append(x.copy())
    draws = np.stack(keep, axis=1).reshape(-1, d)
    return draws, acc / max(total, 1)
