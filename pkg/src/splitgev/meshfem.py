"""Triangular meshes, P1 finite elements and SPDE Matérn precisions.

Mesh file format (plain text, 0-based indices)::

    nodes N triangles M
    x y boundary_flag          # N lines, coordinates in km
    i j k                      # M lines

Blank lines and lines starting with ``#`` are ignored.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .errors import DomainError, MeshError
from .sparsechol import CholeskyFactor, SparseCholesky, factorize


@dataclass
class MeshGeometry:
    """Conforming triangulation; triangles are stored counter-clockwise."""

    nodes: np.ndarray
    triangles: np.ndarray
    boundary: np.ndarray = field(default=None)

    def __post_init__(self):
        self.nodes = np.asarray(self.nodes, dtype=float).reshape(-1, 2)
        tri = np.asarray(self.triangles, dtype=np.int64).reshape(-1, 3)
        n = len(self.nodes)
        if tri.size and (tri.min() < 0 or tri.max() >= n):
            raise MeshError("triangle node index out of range")
        area2 = _signed_area2(self.nodes, tri)
        flip = area2 < 0
        tri = tri.copy()
        tri[flip] = tri[flip][:, [0, 2, 1]]
        bad = np.flatnonzero(np.abs(area2) <= 1e-14 * max(1.0, _extent(self.nodes)) ** 2)
        if bad.size:
            raise MeshError(f"degenerate (zero-area) triangle {int(bad[0])}")
        self.triangles = tri
        if self.boundary is None:
            self.boundary = boundary_nodes(tri, n)
        self.boundary = np.asarray(self.boundary, dtype=bool)

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    @property
    def n_triangles(self) -> int:
        return len(self.triangles)

    def areas(self) -> np.ndarray:
        return 0.5 * _signed_area2(self.nodes, self.triangles)


def _extent(nodes):
    if len(nodes) == 0:
        return 1.0
    return float(np.max(np.ptp(nodes, axis=0)))


def _signed_area2(nodes, tri):
    p0, p1, p2 = nodes[tri[:, 0]], nodes[tri[:, 1]], nodes[tri[:, 2]]
    return (p1[:, 0] - p0[:, 0]) * (p2[:, 1] - p0[:, 1]) - (p1[:, 1] - p0[:, 1]) * (
        p2[:, 0] - p0[:, 0]
    )


def boundary_nodes(triangles, n_nodes) -> np.ndarray:
    """Nodes on edges that belong to exactly one triangle."""
    edges = np.sort(np.concatenate([triangles[:, [0, 1]], triangles[:, [1, 2]], triangles[:, [2, 0]]]), axis=1)
    uniq, counts = np.unique(edges, axis=0, return_counts=True)
    if np.any(counts > 2):
        raise MeshError("non-manifold mesh: edge shared by more than two triangles")
    flags = np.zeros(n_nodes, dtype=bool)
    flags[uniq[counts == 1].ravel()] = True
    return flags


def structured_mesh(x0, x1, y0, y1, nx: int, ny: int) -> MeshGeometry:
    """Rectangle split into ``(nx-1)*(ny-1)`` squares, two triangles each."""
    xs = np.linspace(x0, x1, nx)
    ys = np.linspace(y0, y1, ny)
    X, Y = np.meshgrid(xs, ys)
    nodes = np.column_stack([X.ravel(), Y.ravel()])
    idx = np.arange(nx * ny).reshape(ny, nx)
    a = idx[:-1, :-1].ravel()
    b = idx[:-1, 1:].ravel()
    c = idx[1:, 1:].ravel()
    d = idx[1:, :-1].ravel()
    tri = np.concatenate([np.column_stack([a, b, c]), np.column_stack([a, c, d])])
    return MeshGeometry(nodes, tri)


def read_mesh(path) -> MeshGeometry:
    lines = [
        ln.split("#", 1)[0].strip()
        for ln in Path(path).read_text().splitlines()
    ]
    lines = [ln for ln in lines if ln]
    try:
        head = lines[0].split()
        if head[0] != "nodes" or head[2] != "triangles":
            raise ValueError
        n, m = int(head[1]), int(head[3])
        nodes = np.array([[float(v) for v in ln.split()] for ln in lines[1 : 1 + n]])
        tri = np.array([[int(v) for v in ln.split()] for ln in lines[1 + n : 1 + n + m]])
    except (IndexError, ValueError):
        raise MeshError(f"{path}: malformed mesh file") from None
    if nodes.shape != (n, 3) or tri.shape != (m, 3):
        raise MeshError(f"{path}: expected {n} node lines and {m} triangle lines")
    return MeshGeometry(nodes[:, :2], tri, nodes[:, 2] != 0)


def write_mesh(mesh: MeshGeometry, path) -> None:
    with open(path, "w") as fh:
        fh.write(f"nodes {mesh.n_nodes} triangles {mesh.n_triangles}\n")
        for (x, y), b in zip(mesh.nodes, mesh.boundary):
            fh.write(f"{float(x)!r} {float(y)!r} {int(b)}\n")
        for i, j, k in mesh.triangles:
            fh.write(f"{i} {j} {k}\n")


# --- finite elements ----------------------------------------------------------


def assemble_fem(mesh: MeshGeometry):
    """Lumped mass matrix and P1 stiffness matrix.

    Returns
    -------
    C : scipy.sparse.dia_matrix
        Diagonal; entry ``i`` is one third of the total area of triangles
        incident to node ``i``.
    G : scipy.sparse.csc_matrix
        ``G[i, j] = integral of grad(phi_i) . grad(phi_j)``.
    """
    nodes, tri = mesh.nodes, mesh.triangles
    area = mesh.areas()
    n = mesh.n_nodes
    p = nodes[tri]  # (m, 3, 2)
    # edge opposite vertex k, rotated: grad(phi_k) = perp(e_k) / (2A)
    e = np.stack([p[:, 2] - p[:, 1], p[:, 0] - p[:, 2], p[:, 1] - p[:, 0]], axis=1)
    local = np.einsum("mkd,mld->mkl", e, e) / (4.0 * area)[:, None, None]
    rows = np.repeat(tri, 3, axis=1).ravel()
    cols = np.tile(tri, (1, 3)).ravel()
    G = sp.csc_matrix((local.ravel(), (rows, cols)), shape=(n, n))
    G = 0.5 * (G + G.T)
    cdiag = np.bincount(tri.ravel(), weights=np.repeat(area / 3.0, 3), minlength=n)
    return sp.diags(cdiag), G.tocsc()


@dataclass(frozen=True)
class SpdeParams:
    kappa: float
    omega: float

    def __post_init__(self):
        if not (self.kappa > 0 and self.omega > 0) or not (
            math.isfinite(self.kappa) and math.isfinite(self.omega)
        ):
            raise DomainError(f"SPDE parameters must be positive, got {self}")


class SpdeOperator:
    """Fixed matrices ``C``, ``G`` and ``G C^{-1} G`` for repeated precision builds."""

    def __init__(self, C, G):
        cdiag = np.asarray(C.diagonal(), dtype=float)
        if np.any(cdiag <= 0):
            raise MeshError("lumped mass matrix has a non-positive entry (unused node?)")
        self.C = sp.diags(cdiag).tocsc()
        self.G = sp.csc_matrix(G)
        self.K = (self.G @ sp.diags(1.0 / cdiag) @ self.G).tocsc()
        self.K = 0.5 * (self.K + self.K.T)

    def precision(self, kappa: float, omega: float):
        p = SpdeParams(kappa, omega)
        k2 = p.kappa**2
        w2 = p.omega**2
        return (w2 * (k2 * k2 * self.C + 2.0 * k2 * self.G + self.K)).tocsc()


def spde_precision(C, G, p: SpdeParams):
    """Matérn (smoothness 1) GMRF precision ``w^2 (k^4 C + 2 k^2 G + G C^-1 G)``."""
    if not isinstance(p, SpdeParams):
        p = SpdeParams(*p)
    return SpdeOperator(C, G).precision(p.kappa, p.omega)


def matern_marginal_sd(kappa: float, omega: float) -> float:
    return 1.0 / (math.sqrt(4.0 * math.pi) * kappa * omega)


def matern_range(kappa: float) -> float:
    return math.sqrt(8.0) / kappa


# --- projection ---------------------------------------------------------------


@dataclass
class Projection:
    """Sparse barycentric interpolation from mesh nodes to target points."""

    matrix: sp.csr_matrix
    inside: np.ndarray

    @property
    def shape(self):
        return self.matrix.shape

    def __matmul__(self, u):
        return self.matrix @ u


def _locate(mesh: MeshGeometry, pts: np.ndarray, tol: float):
    """Containing triangle and barycentric weights, bucketed by bounding box."""
    nodes, tri = mesh.nodes, mesh.triangles
    m = len(tri)
    npts = len(pts)
    found = np.full(npts, -1, dtype=np.int64)
    lam = np.zeros((npts, 3))
    if m == 0 or npts == 0:
        return found, lam
    p0 = nodes[tri[:, 0]]
    e1 = nodes[tri[:, 1]] - p0
    e2 = nodes[tri[:, 2]] - p0
    den = e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0]
    lo = nodes.min(axis=0)
    hi = nodes.max(axis=0)
    nb = max(1, int(math.sqrt(m)))
    size = np.maximum((hi - lo) / nb, 1e-300)
    tmin = nodes[tri].min(axis=1)
    tmax = nodes[tri].max(axis=1)
    bmin = np.clip(((tmin - lo) / size).astype(int), 0, nb - 1)
    bmax = np.clip(((tmax - lo) / size).astype(int), 0, nb - 1)
    buckets: dict[tuple[int, int], list[int]] = {}
    for t in range(m):
        for bx in range(bmin[t, 0], bmax[t, 0] + 1):
            for by in range(bmin[t, 1], bmax[t, 1] + 1):
                buckets.setdefault((bx, by), []).append(t)
    inbox = np.all((pts >= lo - tol) & (pts <= hi + tol), axis=1)
    pb = np.clip(((pts - lo) / size).astype(int), 0, nb - 1)
    keys = pb[:, 0] * nb + pb[:, 1]
    order = np.argsort(keys, kind="stable")
    splits = np.flatnonzero(np.diff(keys[order])) + 1
    for group in np.split(order, splits):
        group = group[inbox[group]]
        if group.size == 0:
            continue
        cand = buckets.get((int(pb[group[0], 0]), int(pb[group[0], 1])))
        if not cand:
            continue
        cand = np.asarray(cand)
        d = pts[group][:, None, :] - p0[cand][None, :, :]
        l1 = (d[..., 0] * e2[cand, 1] - d[..., 1] * e2[cand, 0]) / den[cand]
        l2 = (e1[cand, 0] * d[..., 1] - e1[cand, 1] * d[..., 0]) / den[cand]
        l0 = 1.0 - l1 - l2
        ok = (l0 >= -tol) & (l1 >= -tol) & (l2 >= -tol)
        hit = ok.any(axis=1)
        first = ok.argmax(axis=1)
        sel = group[hit]
        k = first[hit]
        found[sel] = cand[k]
        lam[sel] = np.column_stack([l0[hit, k], l1[hit, k], l2[hit, k]])
    return found, lam


def build_projection(mesh: MeshGeometry, points, tol: float = 1e-12) -> Projection:
    """Barycentric projection matrix; rows of points outside the mesh are zero."""
    pts = np.asarray(points, dtype=float).reshape(-1, 2)
    found, lam = _locate(mesh, pts, tol)
    inside = found >= 0
    lam = np.clip(lam, 0.0, None)
    s = lam.sum(axis=1)
    lam[inside] /= s[inside, None]
    rows = np.repeat(np.arange(len(pts)), 3)
    cols = mesh.triangles[np.where(inside, found, 0)].ravel()
    vals = np.where(inside[:, None], lam, 0.0).ravel()
    keep = vals != 0.0
    A = sp.csr_matrix((vals[keep], (rows[keep], cols[keep])), shape=(len(pts), mesh.n_nodes))
    return Projection(A, inside)


# --- Gaussian utilities -------------------------------------------------------


def sample_gmrf(Q, b, seed=None, factor: CholeskyFactor | None = None) -> np.ndarray:
    """Draw from ``N(Q^{-1} b, Q^{-1})`` using a sparse Cholesky factor.

    ``seed`` may be an int or a ``numpy.random.Generator``.
    """
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    F = factor if factor is not None else factorize(sp.csc_matrix(Q))
    return F.sample(np.asarray(b, dtype=float), rng)


def gaussian_logdensity(Q, x, mean, factor: CholeskyFactor | None = None) -> float:
    """``log N(x; mean, Q^{-1})``."""
    x = np.asarray(x, dtype=float)
    mean = np.asarray(mean, dtype=float)
    n = Q.shape[0]
    if x.shape != (n,) or mean.shape != (n,):
        raise ValueError(f"dimension mismatch: Q is {Q.shape}, x {x.shape}, mean {mean.shape}")
    F = factor if factor is not None else factorize(sp.csc_matrix(Q))
    r = x - mean
    return 0.5 * F.logdet() - 0.5 * n * math.log(2.0 * math.pi) - 0.5 * float(r @ (Q @ r))


__all__ = [
    "MeshGeometry",
    "Projection",
    "SparseCholesky",
    "SpdeOperator",
    "SpdeParams",
    "assemble_fem",
    "build_projection",
    "gaussian_logdensity",
    "matern_marginal_sd",
    "matern_range",
    "read_mesh",
    "sample_gmrf",
    "spde_precision",
    "structured_mesh",
    "write_mesh",
]
