"""Covariates at observation sites from a raster of simulated means.

Each site gets a weighted mean of the raster cells whose centres lie within
radius ``r``; weights decay as one minus the CDF of a symmetric
``Beta(alpha, alpha)`` evaluated at ``d / r``. The pair ``(r, alpha)`` is
tuned so the smoothed values match observed site means in least squares.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import special

from .errors import DomainError, NoCoverageError, ValidationError
from .raster import Raster


@dataclass(frozen=True)
class SmootherConfig:
    r: float
    alpha: float

    def __post_init__(self):
        if not (self.r > 0 and self.alpha > 0):
            raise DomainError(f"smoother needs r > 0 and alpha > 0, got {self}")


def decay_weight(d, r: float, alpha: float):
    """``1 - I_{d/r}(alpha, alpha)`` for ``0 <= d <= r``."""
    d = np.asarray(d, dtype=float)
    if r <= 0 or alpha <= 0:
        raise DomainError("r and alpha must be positive")
    if np.any(d < 0) or np.any(d > r):
        raise DomainError("decay weight needs 0 <= d <= r")
    w = 1.0 - special.betainc(alpha, alpha, d / r)
    return float(w) if w.ndim == 0 else w


class _SiteCells:
    """Valid raster cells around each site, sorted by distance, up to ``rmax``."""

    def __init__(self, grid: Raster, sites, rmax: float):
        centers = grid.meta.cell_centers()
        vals = grid.values.ravel()
        ok = np.isfinite(vals)
        self.centers = centers[ok]
        self.flat_index = np.flatnonzero(ok)
        self.vals = vals[ok]
        self.sites = np.asarray(sites, dtype=float).reshape(-1, 2)
        self.idx = []
        self.dist = []
        for s in self.sites:
            d = np.hypot(self.centers[:, 0] - s[0], self.centers[:, 1] - s[1])
            keep = np.flatnonzero(d <= rmax * (1 + 1e-12))
            o = np.argsort(d[keep], kind="stable")
            self.idx.append(keep[o])
            self.dist.append(d[keep][o])

    def smooth(self, r: float, alpha: float) -> np.ndarray:
        """Smoothed value per site; NaN where the neighbourhood carries no weight."""
        out = np.full(len(self.sites), np.nan)
        for i, (ix, d) in enumerate(zip(self.idx, self.dist)):
            m = np.searchsorted(d, r, side="right")
            if m == 0:
                continue
            w = 1.0 - special.betainc(alpha, alpha, np.minimum(d[:m] / r, 1.0))
            sw = w.sum()
            if sw > 0:
                out[i] = float(w @ self.vals[ix[:m]]) / sw
        return out


def neighbor_set(grid: Raster, site, r: float) -> np.ndarray:
    """Flat (row-major) indices of valid cells with centres within ``r`` of ``site``."""
    if not r > 0:
        raise DomainError("radius must be positive")
    sc = _SiteCells(grid, [site], r)
    return sc.flat_index[sc.idx[0]]


def smooth_at_site(grid: Raster, site, cfg: SmootherConfig) -> float:
    sc = _SiteCells(grid, [site], cfg.r)
    v = sc.smooth(cfg.r, cfg.alpha)[0]
    if not np.isfinite(v):
        raise NoCoverageError(f"no raster coverage within r={cfg.r} of site {tuple(site)}")
    return float(v)


def smooth_sites(grid: Raster, sites, cfg: SmootherConfig, names=None) -> np.ndarray:
    sc = _SiteCells(grid, sites, cfg.r)
    v = sc.smooth(cfg.r, cfg.alpha)
    bad = np.flatnonzero(~np.isfinite(v))
    if bad.size:
        label = names[bad[0]] if names is not None else int(bad[0])
        raise NoCoverageError(f"no raster coverage within r={cfg.r} of site {label}")
    return v


@dataclass
class TuneResult:
    r: float
    alpha: float
    objective: float
    lattice_r: np.ndarray = field(repr=False)
    lattice_alpha: np.ndarray = field(repr=False)
    lattice_objective: np.ndarray = field(repr=False)


def default_lattice(grid: Raster):
    """25 log-spaced radii from one cell to a quarter of the raster diagonal, 13 shapes."""
    rmin = grid.meta.cellsize
    rmax = max(grid.meta.diameter() / 4.0, rmin * 1.0001)
    return np.geomspace(rmin, rmax, 25), np.geomspace(0.25, 16.0, 13)


def tune_smoother(
    grid: Raster,
    sites,
    observed_means,
    r_values=None,
    alpha_values=None,
    refine: bool = True,
) -> TuneResult:
    """Least-squares choice of ``(r, alpha)``.

    Exhaustive search over the lattice ``r_values x alpha_values`` (ties go
    to smaller ``r``, then smaller ``alpha``), optionally followed by a
    coordinate descent in log-space that only accepts strict improvements
    and stays within a factor of four of the lattice bounds.
    """
    obs = np.asarray(observed_means, dtype=float)
    if r_values is None or alpha_values is None:
        dr, da = default_lattice(grid)
        r_values = dr if r_values is None else r_values
        alpha_values = da if alpha_values is None else alpha_values
    r_values = np.sort(np.asarray(r_values, dtype=float))
    alpha_values = np.sort(np.asarray(alpha_values, dtype=float))
    if len(obs) != len(np.asarray(sites).reshape(-1, 2)):
        raise ValidationError("one observed mean per site required")
    rcap = r_values[-1] * (4.0 if refine else 1.0)
    sc = _SiteCells(grid, sites, rcap)
    atol = 1e-20 * float(np.sum(obs**2))

    def objective(r, a):
        v = sc.smooth(r, a)
        if not np.all(np.isfinite(v)):
            return math.inf
        return float(np.sum((v - obs) ** 2))

    def better(new, best):
        if not math.isfinite(best):
            return new < best
        return new < best - (1e-12 * best + atol)

    table = np.full((len(r_values), len(alpha_values)), math.inf)
    best = (math.inf, None, None)
    for i, r in enumerate(r_values):
        for j, a in enumerate(alpha_values):
            table[i, j] = objective(r, a)
            if better(table[i, j], best[0]):
                best = (table[i, j], r, a)
    if best[1] is None:
        raise NoCoverageError("every candidate radius leaves some site without coverage")
    obj, r0, a0 = best
    if refine:
        lo_r, hi_r = r_values[0], rcap
        lo_a, hi_a = alpha_values[0] / 4.0, alpha_values[-1] * 4.0
        step_r = math.log(r_values[1] / r_values[0]) if len(r_values) > 1 else math.log(2.0)
        step_a = math.log(alpha_values[1] / alpha_values[0]) if len(alpha_values) > 1 else math.log(2.0)
        while max(step_r, step_a) > 1e-3:
            moved = False
            for cand in (
                (r0 * math.exp(-step_r), a0),
                (r0 * math.exp(step_r), a0),
                (r0, a0 * math.exp(-step_a)),
                (r0, a0 * math.exp(step_a)),
            ):
                if not (lo_r <= cand[0] <= hi_r and lo_a <= cand[1] <= hi_a):
                    continue
                v = objective(*cand)
                if better(v, obj):
                    obj, (r0, a0), moved = v, cand, True
            if not moved:
                step_r *= 0.5
                step_a *= 0.5
    return TuneResult(float(r0), float(a0), float(obj), r_values, alpha_values, table)


def covariate_vectors(grid: Raster, sites, cfg: SmootherConfig, names=None):
    """Design matrices ``X_mu = [1, x]`` and ``X_tau = [1, log x]`` at the sites."""
    x = smooth_sites(grid, sites, cfg, names)
    return design_from_values(x, names)


def design_from_values(x, names=None):
    x = np.asarray(x, dtype=float)
    bad = np.flatnonzero(~(x > 0))
    if bad.size:
        label = names[bad[0]] if names is not None else int(bad[0])
        raise ValidationError(f"non-positive covariate {x[bad[0]]} at site {label}")
    ones = np.ones_like(x)
    return np.column_stack([ones, x]), np.column_stack([ones, np.log(x)])
