"""Synthetic datasets drawn from the model itself."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .gevdist import GevParams, gev_sample
from .lgm import ModelSpec, ObservationData, Priors
from .meshfem import MeshGeometry, build_projection, sample_gmrf, structured_mesh
from .raster import Raster, RasterMeta


def covariate_surface(x, y):
    """Smooth positive test covariate, roughly between 2 and 8."""
    return 5.0 + 2.0 * np.sin(np.asarray(x) / 23.0) * np.cos(np.asarray(y) / 31.0) + 0.01 * np.asarray(x)


@dataclass
class SimulatedData:
    model: ModelSpec
    sites: np.ndarray
    covariate: np.ndarray
    raster: Raster
    mesh: MeshGeometry
    truth: dict

    @property
    def data(self) -> ObservationData:
        return self.model.data


def simulate(
    n_sites: int = 20,
    n_years: int = 50,
    seed: int = 0,
    extent: float = 150.0,
    mesh_n: int = 15,
    site_margin: float = 20.0,
    beta_mu=(2.4, 11.0),
    beta_tau=(1.5, 0.7),
    xi: float = 0.1,
    theta=None,
    cellsize: float = 5.0,
    priors: Priors = Priors(),
) -> SimulatedData:
    """Draw sites, latent fields and GEV annual maxima from the model.

    Sites are uniform on ``[margin, extent - margin]^2``, the mesh is a
    structured ``mesh_n x mesh_n`` grid over ``[0, extent]^2``, and
    ``theta`` defaults to the prior medians.
    """
    rng = np.random.default_rng(seed)
    theta = priors.medians() if theta is None else np.asarray(theta, dtype=float)
    mesh = structured_mesh(0.0, extent, 0.0, extent, mesh_n, mesh_n)
    sites = rng.uniform(site_margin, extent - site_margin, size=(n_sites, 2))
    xcov = covariate_surface(sites[:, 0], sites[:, 1])
    X_mu = np.column_stack([np.ones(n_sites), xcov])
    X_tau = np.column_stack([np.ones(n_sites), np.log(xcov)])
    A = build_projection(mesh, sites)
    model0 = ModelSpec(X_mu, X_tau, A, mesh=mesh, priors=priors)
    u_mu = sample_gmrf(model0.Qu(theta[0], theta[1]), np.zeros(model0.n), seed=rng)
    u_tau = sample_gmrf(model0.Qu(theta[2], theta[3]), np.zeros(model0.n), seed=rng)
    v_mu = rng.normal(0.0, 1.0 / np.sqrt(theta[4]), n_sites)
    v_tau = rng.normal(0.0, 1.0 / np.sqrt(theta[5]), n_sites)
    bm = np.asarray(beta_mu, dtype=float)
    bt = np.asarray(beta_tau, dtype=float)
    mu = X_mu @ bm + A @ u_mu + v_mu
    tau = X_tau @ bt + A @ u_tau + v_tau
    per_site = [gev_sample(GevParams(mu[i], tau[i], xi), n_years, rng) for i in range(n_sites)]
    years = [np.arange(n_years) for _ in range(n_sites)]
    data = ObservationData.from_lists(per_site, years)
    model = ModelSpec(X_mu, X_tau, A, C=model0.spde.C, G=model0.spde.G, mesh=mesh, data=data, priors=priors)
    ncell = int(round(extent / cellsize))
    meta = RasterMeta(ncell, ncell, 0.0, 0.0, cellsize)
    c = meta.cell_centers()
    raster = Raster(meta, covariate_surface(c[:, 0], c[:, 1]).reshape(meta.shape))
    truth = {
        "mu": mu, "tau": tau, "xi": xi, "beta_mu": bm, "beta_tau": bt,
        "u_mu": u_mu, "u_tau": u_tau, "v_mu": v_mu, "v_tau": v_tau, "theta": theta,
    }
    return SimulatedData(model, sites, xcov, raster, mesh, truth)
