"""Posterior prediction of location, scale and quantile surfaces on a raster grid.

Every statistic is computed per posterior sample and then summarised with
streaming per-cell accumulators, so the full stack of grid samples is never
held in memory.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ValidationError
from .gevdist import quantile_array
from .meshfem import MeshGeometry, Projection, build_projection
from .raster import Raster, RasterMeta, write_ascii_grid


@dataclass
class GridSurface:
    """Per-cell statistic on the prediction grid; NaN marks nodata."""

    meta: RasterMeta
    values: np.ndarray
    label: str

    def to_raster(self) -> Raster:
        return Raster(self.meta, self.values)

    def write(self, path, fmt: str = "%.10g") -> None:
        write_ascii_grid(self.to_raster(), path, fmt)


class PredictionGrid:
    """Design and projection for every raster cell.

    Cells outside the mesh or without a positive covariate are inactive
    and come out as nodata.
    """

    def __init__(self, covariate: Raster, mesh: MeshGeometry):
        self.meta = covariate.meta
        centers = self.meta.cell_centers()
        x = covariate.values.ravel()
        self.A = build_projection(mesh, centers)
        self.active = self.A.inside & np.isfinite(x) & (x > 0)
        idx = np.flatnonzero(self.active)
        self.index = idx
        self.A_active = self.A.matrix[idx]
        xa = x[idx]
        ones = np.ones_like(xa)
        self.X_mu = np.column_stack([ones, xa])
        self.X_tau = np.column_stack([ones, np.log(xa)])

    @property
    def n_cells(self) -> int:
        return self.meta.nrows * self.meta.ncols

    def surface(self, active_values, label: str) -> GridSurface:
        full = np.full(self.n_cells, np.nan)
        full[self.index] = active_values
        return GridSurface(self.meta, full.reshape(self.meta.shape), label)


def project_field_sample(u, A: Projection) -> np.ndarray:
    """``A u`` with NaN at points outside the mesh."""
    u = np.asarray(u, dtype=float)
    if u.shape[0] != A.shape[1]:
        raise ValidationError(f"field has {u.shape[0]} values, projection expects {A.shape[1]}")
    out = A.matrix @ u
    out = np.asarray(out, dtype=float)
    out[~A.inside] = np.nan
    return out


def location_surface_sample(beta, u, covariate, A: Projection, log_covariate: bool = False) -> np.ndarray:
    """``[1, x] beta + A u`` per grid point (``[1, log x]`` for the log-scale)."""
    x = np.asarray(covariate, dtype=float).ravel()
    beta = np.asarray(beta, dtype=float)
    field = project_field_sample(u, A)
    with np.errstate(invalid="ignore", divide="ignore"):
        cov = np.log(x) if log_covariate else x
    out = beta[0] + beta[1] * cov + field
    out[~np.isfinite(out)] = np.nan
    return out


class StreamingMoments:
    """Running per-cell mean and variance, updated in batches (Chan/Welford merge)."""

    def __init__(self, size: int):
        self.n = 0
        self.mean = np.zeros(size)
        self.m2 = np.zeros(size)

    def update(self, batch) -> None:
        """Add samples; ``batch`` has shape ``(k, size)`` or ``(size,)``."""
        b = np.atleast_2d(np.asarray(batch, dtype=float))
        k = b.shape[0]
        if k == 0:
            return
        bm = b.mean(axis=0)
        bm2 = ((b - bm) ** 2).sum(axis=0)
        n = self.n + k
        delta = bm - self.mean
        self.mean = self.mean + delta * (k / n)
        self.m2 = self.m2 + bm2 + delta**2 * (self.n * k / n)
        self.n = n

    def merge(self, other: "StreamingMoments") -> "StreamingMoments":
        out = StreamingMoments(len(self.mean))
        n = self.n + other.n
        if n == 0:
            return out
        delta = other.mean - self.mean
        out.n = n
        out.mean = self.mean + delta * (other.n / n)
        out.m2 = self.m2 + other.m2 + delta**2 * (self.n * other.n / n)
        return out

    def variance(self, ddof: int = 1) -> np.ndarray:
        if self.n - ddof <= 0:
            return np.full_like(self.mean, np.nan)
        return self.m2 / (self.n - ddof)

    def sd(self, ddof: int = 1) -> np.ndarray:
        return np.sqrt(self.variance(ddof))


def _column_block(names, prefix):
    cols = [i for i, nm in enumerate(names) if nm.rsplit("_", 1)[0] == prefix and nm[len(prefix) + 1 :].isdigit()]
    if not cols:
        raise ValidationError(f"trace has no '{prefix}' columns; fit with the latent field stored")
    return cols


def quantile_surface(traces, probs, grid: PredictionGrid, burnin: int = 0, batch: int = 256) -> dict:
    """Posterior mean and sd surfaces of ``u``, ``mu``, ``tau`` and each quantile.

    Returns a dict keyed like ``"mu_mean"``, ``"u_tau_sd"``, ``"q0.95_mean"``.
    """
    probs = [float(p) for p in probs]
    for p in probs:
        if not 0.0 < p < 1.0:
            raise ValidationError(f"quantile level {p} outside (0, 1)")
    names = list(traces[0].names)
    c_bm = _column_block(names, "beta_mu")
    c_um = _column_block(names, "u_mu")
    c_bt = _column_block(names, "beta_tau")
    c_ut = _column_block(names, "u_tau")
    c_xi = names.index("xi")
    m = len(grid.index)
    acc = {key: StreamingMoments(m) for key in ("u_mu", "u_tau", "mu", "tau")}
    qacc = {p: StreamingMoments(m) for p in probs}
    A = grid.A_active
    for t in traces:
        s = np.asarray(t.samples)[burnin:]
        for start in range(0, len(s), batch):
            b = s[start : start + batch]
            ug_mu = (A @ b[:, c_um].T).T
            ug_tau = (A @ b[:, c_ut].T).T
            mu = b[:, c_bm] @ grid.X_mu.T + ug_mu
            tau = b[:, c_bt] @ grid.X_tau.T + ug_tau
            acc["u_mu"].update(ug_mu)
            acc["u_tau"].update(ug_tau)
            acc["mu"].update(mu)
            acc["tau"].update(tau)
            for p in probs:
                q = np.vstack([quantile_array(p, mu[k], tau[k], float(b[k, c_xi])) for k in range(len(b))])
                qacc[p].update(q)
    if acc["mu"].n == 0:
        raise ValidationError("no post-burn-in samples")
    out = {}
    for key, a in acc.items():
        out[f"{key}_mean"] = grid.surface(a.mean, f"{key}_mean")
        out[f"{key}_sd"] = grid.surface(a.sd(), f"{key}_sd")
    for p, a in qacc.items():
        tag = f"q{p:g}"
        out[f"{tag}_mean"] = grid.surface(a.mean, f"{tag}_mean")
        out[f"{tag}_sd"] = grid.surface(a.sd(), f"{tag}_sd")
    return out
