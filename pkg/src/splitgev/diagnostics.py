"""Convergence and goodness-of-fit diagnostics for sampler output."""
from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import stats

from .errors import ValidationError
from .gevdist import GevParams, gev_cdf


@dataclass
class GelmanRubin:
    value: float
    degenerate: bool = False


def gelman_rubin(chains) -> GelmanRubin:
    """Potential scale reduction factor ``sqrt(V / W)`` (non-split form).

    ``V = (n-1)/n W + (m+1)/(m n) B`` with ``B/n`` the variance of chain
    means and ``W`` the mean within-chain variance. Zero within-chain
    variance is reported as 1 with ``degenerate=True``.
    """
    x = np.asarray(chains, dtype=float)
    if x.ndim != 2 or x.shape[0] < 2 or x.shape[1] < 10:
        raise ValidationError("need at least 2 chains of length >= 10")
    m, n = x.shape
    means = x.mean(axis=1)
    W = float(np.mean(x.var(axis=1, ddof=1)))
    B = n * float(np.var(means, ddof=1))
    scale = max(float(np.max(np.abs(x))), 1e-300)
    if W <= (1e-14 * scale) ** 2:
        return GelmanRubin(1.0, True)
    V = (n - 1) / n * W + (m + 1) / (m * n) * B
    return GelmanRubin(float(np.sqrt(V / W)), False)


@dataclass
class Acf:
    values: np.ndarray
    degenerate: bool = False


def autocorrelation(series, max_lag: int) -> Acf:
    """Normalised sample autocorrelation for lags ``0..max_lag`` (FFT-based)."""
    x = np.asarray(series, dtype=float)
    n = len(x)
    if not n > max_lag >= 0:
        raise ValidationError("series must be longer than max_lag")
    d = x - x.mean()
    var = float(d @ d)
    if var <= 1e-28 * max(float(np.max(np.abs(x))) ** 2, 1e-300) * n:
        out = np.zeros(max_lag + 1)
        out[0] = 1.0
        return Acf(out, True)
    nfft = 1 << (2 * n - 1).bit_length()
    f = np.fft.rfft(d, nfft)
    ac = np.fft.irfft(f * np.conj(f), nfft)[: max_lag + 1]
    return Acf(ac / ac[0], False)


def running_mean(series) -> np.ndarray:
    x = np.asarray(series, dtype=float)
    return np.cumsum(x) / np.arange(1, len(x) + 1)


def effective_sample_size(chains) -> float:
    """ESS of pooled chains using Geyer's initial positive sequence per chain."""
    x = np.atleast_2d(np.asarray(chains, dtype=float))
    total = 0.0
    for c in x:
        n = len(c)
        acf = autocorrelation(c, n - 1)
        if acf.degenerate:
            total += n
            continue
        rho = acf.values
        s = 0.0
        for k in range(0, n - 1, 2):
            pair = rho[k] + rho[k + 1]
            if pair <= 0:
                break
            s += pair
        tau = max(2.0 * s - 1.0, 1.0 / n)
        total += n / tau
    return float(total)


@dataclass
class PosteriorSummary:
    names: list
    mean: np.ndarray
    sd: np.ndarray
    q025: np.ndarray
    q975: np.ndarray

    def row(self, name: str) -> dict:
        i = self.names.index(name)
        return {"mean": self.mean[i], "sd": self.sd[i], "q025": self.q025[i], "q975": self.q975[i]}

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["parameter", "q025", "mean", "q975", "sd"])
            for i, nm in enumerate(self.names):
                w.writerow([nm] + [repr(float(a[i])) for a in (self.q025, self.mean, self.q975, self.sd)])


def pooled(traces, burnin: int) -> np.ndarray:
    """Post-burn-in rows of all chains stacked; ``traces`` holds 2-D arrays or ChainTraces."""
    arrs = [np.asarray(getattr(t, "samples", t), dtype=float) for t in traces]
    post = [a[burnin:] for a in arrs]
    out = np.concatenate(post, axis=0) if post else np.zeros((0, 0))
    if out.shape[0] == 0:
        raise ValidationError("no post-burn-in samples")
    return out


def summarize(traces, burnin: int = 0, names=None) -> PosteriorSummary:
    """Pooled posterior mean, sd and type-7 2.5% / 97.5% quantiles per column."""
    x = pooled(traces, burnin)
    if names is None:
        names = list(getattr(traces[0], "names", [f"p{i}" for i in range(x.shape[1])]))
    sd = x.std(axis=0, ddof=1) if x.shape[0] > 1 else np.zeros(x.shape[1])
    q = np.quantile(x, [0.025, 0.975], axis=0, method="linear")
    return PosteriorSummary(list(names), x.mean(axis=0), sd, q[0], q[1])


def cdf_comparison(values, params: GevParams) -> np.ndarray:
    """Columns ``(y sorted, i/n empirical CDF, model CDF)``."""
    y = np.sort(np.asarray(values, dtype=float))
    n = len(y)
    if n == 0:
        raise ValidationError("need at least one observation")
    ecdf = np.arange(1, n + 1) / n
    return np.column_stack([y, ecdf, np.asarray(gev_cdf(y, params), dtype=float)])


def trend_lrt(residuals, years):
    """Likelihood-ratio test of a linear year effect in Gaussian residuals.

    Returns ``(statistic, p_value)`` with ``statistic = n log(RSS0 / RSS1)``
    referred to a chi-square with one degree of freedom.
    """
    m = np.asarray(residuals, dtype=float)
    t = np.asarray(years, dtype=float)
    if m.shape != t.shape:
        raise ValidationError("residuals and years must align")
    if len(np.unique(t)) < 3:
        raise ValidationError("need at least 3 distinct years")
    n = len(m)
    rss0 = float(np.sum((m - m.mean()) ** 2))
    X = np.column_stack([np.ones(n), t - t.mean()])
    coef, *_ = np.linalg.lstsq(X, m, rcond=None)
    rss1 = float(np.sum((m - X @ coef) ** 2))
    if rss0 <= 0:
        return 0.0, 1.0
    stat = max(n * np.log(rss0 / max(rss1, 1e-300 * rss0)), 0.0)
    return float(stat), float(stats.chi2.sf(stat, 1))


def site_residuals(data, mu, tau, xi):
    """Probability-integral residuals ``Phi^{-1}(F(y_it))`` with matching years."""
    res = np.empty(len(data.y))
    for i in range(data.n_sites):
        s = slice(data.offsets[i], data.offsets[i + 1])
        u = np.asarray(gev_cdf(data.y[s], GevParams(float(mu[i]), float(tau[i]), float(xi))), dtype=float)
        res[s] = stats.norm.ppf(np.clip(u, 1e-15, 1 - 1e-15))
    return res


def diagnostics_table(traces, burnin: int, max_lag: int = 50):
    """Per-parameter Gelman-Rubin, ESS and acceptance-independent summaries."""
    names = list(traces[0].names)
    post = [np.asarray(t.samples[burnin:]) for t in traces]
    n = min(len(p) for p in post)
    rows = []
    for j, nm in enumerate(names):
        series = np.array([p[:n, j] for p in post])
        gr = gelman_rubin(series) if len(traces) >= 2 and n >= 10 else GelmanRubin(float("nan"), False)
        ess = effective_sample_size(series) if n > 2 else float("nan")
        rows.append((nm, gr.value, gr.degenerate, ess))
    return rows


def write_series_csv(path, columns: dict) -> None:
    """Write equal-length named columns for external plotting."""
    path = Path(path)
    keys = list(columns)
    arr = np.column_stack([np.asarray(columns[k], dtype=float) for k in keys])
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(keys)
        for row in arr:
            w.writerow([repr(float(v)) for v in row])
