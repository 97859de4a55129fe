"""Latent Gaussian model: design, block precisions and priors.

Latent vector ordering (used for every array and file)::

    eta = (mu[0..J), tau[0..J), xi)
    nu  = (beta_mu[0..p), u_mu[0..n), beta_tau[0..p), u_tau[0..n))

and hyperparameters ``theta`` in the order of :data:`HYPER_NAMES`.
Conditional on ``theta`` the latent field ``x = (eta, nu)`` is zero-mean
Gaussian with precision

    [[Q_eps,        -Q_eps Z           ],
     [-Z' Q_eps,    Q_nu + Z' Q_eps Z  ]].
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np
import scipy.sparse as sp

from .errors import DomainError, ValidationError
from .meshfem import MeshGeometry, Projection, SpdeOperator, assemble_fem
from .sparsechol import SparseCholesky

HYPER_NAMES = (
    "kappa_u_mu",
    "omega_u_mu",
    "kappa_u_tau",
    "omega_u_tau",
    "kappa_v_mu",
    "kappa_v_tau",
)


@dataclass(frozen=True)
class Priors:
    """Fixed prior constants.

    ``log_mean``/``log_sd`` are the location and *standard deviation* of the
    normal distribution of ``log(theta_k)``, in :data:`HYPER_NAMES` order.
    """

    kappa_beta_mu: float = 0.0025
    kappa_beta_tau: float = 0.25
    kappa_xi: float = 2.0
    log_mean: tuple = (-2.7, -1.1, -2.5, 1.8, -4.5, 1.5)
    log_sd: tuple = (0.45, 0.1, 0.45, 0.1, 0.45, 0.1)

    def __post_init__(self):
        vals = (self.kappa_beta_mu, self.kappa_beta_tau, self.kappa_xi, *self.log_sd)
        if not all(v > 0 for v in vals):
            raise ValidationError("prior precisions and log-scale sds must be positive")
        if len(self.log_mean) != 6 or len(self.log_sd) != 6:
            raise ValidationError("six hyperprior (mean, sd) pairs required")

    def medians(self) -> np.ndarray:
        return np.exp(np.asarray(self.log_mean, dtype=float))


def log_hyperprior(theta, priors: Priors = Priors()) -> float:
    """Sum of six independent lognormal log-densities."""
    theta = np.asarray(theta, dtype=float)
    if theta.shape != (6,):
        raise ValueError("theta must have 6 components")
    if not np.all(theta > 0):
        return -math.inf
    lt = np.log(theta)
    m = np.asarray(priors.log_mean)
    s = np.asarray(priors.log_sd)
    return float(np.sum(-lt - np.log(s * math.sqrt(2.0 * math.pi)) - 0.5 * ((lt - m) / s) ** 2))


def check_theta(theta) -> np.ndarray:
    theta = np.asarray(theta, dtype=float)
    if theta.shape != (6,) or not np.all(np.isfinite(theta)) or not np.all(theta > 0):
        raise DomainError(f"hyperparameters must be 6 positive numbers, got {theta}")
    return theta


@dataclass
class ObservationData:
    """Observations flattened and grouped by site.

    ``y[offsets[i]:offsets[i+1]]`` are the observed years of site ``i``;
    absent years are simply not stored.
    """

    y: np.ndarray
    offsets: np.ndarray
    years: np.ndarray | None = None

    def __post_init__(self):
        self.y = np.asarray(self.y, dtype=float)
        self.offsets = np.asarray(self.offsets, dtype=np.int64)
        if self.offsets[0] != 0 or self.offsets[-1] != len(self.y) or np.any(np.diff(self.offsets) < 0):
            raise ValidationError("offsets must be nondecreasing from 0 to len(y)")
        if self.years is not None:
            self.years = np.asarray(self.years)

    @property
    def n_sites(self) -> int:
        return len(self.offsets) - 1

    @property
    def counts(self) -> np.ndarray:
        return np.diff(self.offsets)

    def site(self, i: int) -> np.ndarray:
        return self.y[self.offsets[i] : self.offsets[i + 1]]

    @classmethod
    def from_lists(cls, per_site, years=None):
        off = np.concatenate([[0], np.cumsum([len(v) for v in per_site])])
        y = np.concatenate([np.asarray(v, float) for v in per_site]) if len(per_site) else np.zeros(0)
        yr = None
        if years is not None:
            yr = np.concatenate([np.asarray(v) for v in years])
        return cls(y, off, yr)

    @classmethod
    def empty(cls, J: int):
        return cls(np.zeros(0), np.zeros(J + 1, dtype=np.int64))


@dataclass
class LatentState:
    mu: np.ndarray
    tau: np.ndarray
    xi: float
    beta_mu: np.ndarray
    u_mu: np.ndarray
    beta_tau: np.ndarray
    u_tau: np.ndarray

    def eta(self) -> np.ndarray:
        return np.concatenate([self.mu, self.tau, [self.xi]])

    def nu(self) -> np.ndarray:
        return np.concatenate([self.beta_mu, self.u_mu, self.beta_tau, self.u_tau])

    def with_nu(self, nu, p: int, n: int) -> "LatentState":
        nu = np.asarray(nu, dtype=float)
        return replace(
            self,
            beta_mu=nu[:p].copy(),
            u_mu=nu[p : p + n].copy(),
            beta_tau=nu[p + n : 2 * p + n].copy(),
            u_tau=nu[2 * p + n :].copy(),
        )

    def copy(self) -> "LatentState":
        return LatentState(
            self.mu.copy(), self.tau.copy(), float(self.xi), self.beta_mu.copy(),
            self.u_mu.copy(), self.beta_tau.copy(), self.u_tau.copy(),
        )


def _as_csr(A):
    if isinstance(A, Projection):
        A = A.matrix
    return sp.csr_matrix(A, dtype=float)


class _AlignedSum:
    """Linear combinations of fixed sparse matrices on one union pattern."""

    def __init__(self, mats):
        shape = mats[0].shape
        P = sum(sp.csc_matrix((np.ones(m.nnz), m.nonzero()), shape=shape) for m in mats)
        P = sp.csc_matrix(P)
        P.sum_duplicates()
        P.sort_indices()
        self.indices = P.indices.copy()
        self.indptr = P.indptr.copy()
        self.shape = shape
        cols = np.repeat(np.arange(shape[1]), np.diff(self.indptr))
        keys = cols.astype(np.int64) * shape[0] + self.indices
        self.data = []
        for m in mats:
            c = sp.coo_matrix(m)
            c.sum_duplicates()
            k = c.col.astype(np.int64) * shape[0] + c.row
            d = np.zeros(len(keys))
            np.add.at(d, np.searchsorted(keys, k), c.data)
            self.data.append(d)

    def combine(self, coefs):
        vals = np.zeros(len(self.indices))
        for c, d in zip(coefs, self.data):
            if c != 0.0:
                vals += c * d
        return sp.csc_matrix((vals, self.indices, self.indptr), shape=self.shape)

    def pattern(self):
        return sp.csc_matrix((np.ones(len(self.indices)), self.indices, self.indptr), shape=self.shape)


class ModelSpec:
    """Immutable model description shared by all chains.

    Parameters
    ----------
    X_mu, X_tau : (J, p) arrays
        Site design matrices ``[1, x]`` and ``[1, log x]``.
    A_S : Projection or sparse (J, n)
        Mesh-to-site projection.
    mesh : MeshGeometry, optional
        Used to assemble ``C`` and ``G`` when they are not given.
    data : ObservationData, optional
        Site observations; defaults to no data.
    """

    def __init__(self, X_mu, X_tau, A_S, mesh: MeshGeometry | None = None, C=None, G=None,
                 data: ObservationData | None = None, priors: Priors = Priors()):
        self.X_mu = np.atleast_2d(np.asarray(X_mu, dtype=float))
        self.X_tau = np.atleast_2d(np.asarray(X_tau, dtype=float))
        self.A_S = _as_csr(A_S)
        if C is None or G is None:
            if mesh is None:
                raise ValidationError("need a mesh or assembled C and G")
            C, G = assemble_fem(mesh)
        self.mesh = mesh
        self.spde = SpdeOperator(C, G)
        self.priors = priors
        self.J = self.X_mu.shape[0]
        self.p = self.X_mu.shape[1]
        self.n = self.spde.C.shape[0]
        if self.X_tau.shape != (self.J, self.p) or self.A_S.shape != (self.J, self.n):
            raise ValidationError(
                f"dimension mismatch: X_mu {self.X_mu.shape}, X_tau {self.X_tau.shape}, "
                f"A_S {self.A_S.shape}, mesh nodes {self.n}"
            )
        self.data = data if data is not None else ObservationData.empty(self.J)
        if self.data.n_sites != self.J:
            raise ValidationError(f"data has {self.data.n_sites} sites, model has {self.J}")
        self._build_fixed()

    # --- sizes and slices
    @property
    def dim_eta(self) -> int:
        return 2 * self.J + 1

    @property
    def dim_nu(self) -> int:
        return 2 * self.p + 2 * self.n

    def nu_slices(self):
        p, n = self.p, self.n
        return (slice(0, p), slice(p, p + n), slice(p + n, 2 * p + n), slice(2 * p + n, 2 * p + 2 * n))

    def _build_fixed(self):
        J, p, n = self.J, self.p, self.n
        Zmu = sp.hstack([sp.csr_matrix(self.X_mu), self.A_S, sp.csr_matrix((J, p + n))]).tocsr()
        Ztau = sp.hstack([sp.csr_matrix((J, p + n)), sp.csr_matrix(self.X_tau), self.A_S]).tocsr()
        self.Z_mu = Zmu
        self.Z_tau = Ztau
        m = self.dim_nu
        s_bm, s_um, s_bt, s_ut = self.nu_slices()

        def embed(M, sl):
            M = sp.coo_matrix(M)
            return sp.csc_matrix((M.data, (M.row + sl.start, M.col + sl.start)), shape=(m, m))

        Ip = sp.identity(p)
        spde = self.spde
        self._qc = _AlignedSum(
            [
                embed(Ip, s_bm), embed(spde.C, s_um), embed(spde.G, s_um), embed(spde.K, s_um),
                embed(Ip, s_bt), embed(spde.C, s_ut), embed(spde.G, s_ut), embed(spde.K, s_ut),
                (Zmu.T @ Zmu).tocsc(), (Ztau.T @ Ztau).tocsc(),
            ]
        )
        self._qu = _AlignedSum([spde.C, spde.G, spde.K])

    # --- per-theta assembly
    def Qu(self, kappa: float, omega: float):
        k2, w2 = kappa * kappa, omega * omega
        return self._qu.combine([w2 * k2 * k2, 2.0 * w2 * k2, w2])

    def Qc(self, theta):
        """``Q_nu + Z' Q_eps Z`` (the precision of ``nu`` given ``eta``)."""
        km, wm, kt, wt, vm, vt = check_theta(theta)
        pr = self.priors
        return self._qc.combine(
            [
                pr.kappa_beta_mu, wm**2 * km**4, 2 * wm**2 * km**2, wm**2,
                pr.kappa_beta_tau, wt**2 * kt**4, 2 * wt**2 * kt**2, wt**2,
                vm, vt,
            ]
        )

    def qc_analysis(self, backend=None) -> SparseCholesky:
        return SparseCholesky(self._qc.pattern(), backend=backend)

    def qu_analysis(self, backend=None) -> SparseCholesky:
        return SparseCholesky(self._qu.pattern(), backend=backend)

    def Zt_Qeps_eta(self, theta, mu, tau) -> np.ndarray:
        return theta[4] * (self.Z_mu.T @ mu) + theta[5] * (self.Z_tau.T @ tau)

    def prior_means(self, nu):
        """``Z_A nu`` split into site means for ``mu`` and ``tau``."""
        return self.Z_mu @ nu, self.Z_tau @ nu


def build_Z(spec: ModelSpec):
    """``(2J+1) x (2p+2n)`` block matrix; the last row (for ``xi``) is zero."""
    return sp.vstack([spec.Z_mu, spec.Z_tau, sp.csr_matrix((1, spec.dim_nu))]).tocsr()


def build_Qeps(spec: ModelSpec, theta):
    theta = check_theta(theta)
    d = np.concatenate(
        [np.full(spec.J, theta[4]), np.full(spec.J, theta[5]), [spec.priors.kappa_xi]]
    )
    return sp.diags(d)


def build_Qnu(spec: ModelSpec, theta):
    theta = check_theta(theta)
    pr = spec.priors
    return sp.block_diag(
        [
            pr.kappa_beta_mu * sp.identity(spec.p),
            spec.Qu(theta[0], theta[1]),
            pr.kappa_beta_tau * sp.identity(spec.p),
            spec.Qu(theta[2], theta[3]),
        ],
        format="csc",
    )


def joint_precision(spec: ModelSpec, theta):
    """Precision of ``(eta, nu)`` given ``theta``."""
    Qe = build_Qeps(spec, theta)
    Z = build_Z(spec)
    QeZ = Qe @ Z
    Qn = build_Qnu(spec, theta)
    Q = sp.bmat([[Qe, -QeZ], [-QeZ.T, Qn + Z.T @ QeZ]], format="csc")
    return Q


def initial_latent(spec: ModelSpec, xi: float = 0.1) -> LatentState:
    J, p, n = spec.J, spec.p, spec.n
    return LatentState(np.zeros(J), np.zeros(J), xi, np.zeros(p), np.zeros(n), np.zeros(p), np.zeros(n))


__all__ = [
    "HYPER_NAMES",
    "LatentState",
    "ModelSpec",
    "ObservationData",
    "Priors",
    "build_Qeps",
    "build_Qnu",
    "build_Z",
    "joint_precision",
    "log_hyperprior",
]
