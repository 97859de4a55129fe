"""Cholesky factorisation of sparse symmetric positive-definite matrices.

Two backends share one interface:

* ``cholmod`` -- CHOLMOD through scikit-sparse, AMD ordering, symbolic
  analysis reused across numeric factorisations.
* ``banded`` -- reverse Cuthill-McKee ordering followed by LAPACK banded
  Cholesky; dense LAPACK when the permuted bandwidth is too wide for the
  band format to pay off. Needs only scipy.

A factor of ``Q`` with fill-reducing permutation satisfies
``Q[p][:, p] = L @ L.T``.
"""
from __future__ import annotations

import os

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
from scipy.linalg import lapack
from scipy.sparse.csgraph import reverse_cuthill_mckee

from .errors import NotPositiveDefiniteError

try:
    if os.environ.get("SPLITGEV_NO_CHOLMOD"):
        raise ImportError
    from sksparse import cholmod as _cholmod
except ImportError:
    _cholmod = None

BACKEND = "cholmod" if _cholmod is not None else "banded"


class CholeskyFactor:
    """Numeric factor: solves, log-determinant and Gaussian deviates."""

    def solve(self, b: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def logdet(self) -> float:
        raise NotImplementedError

    def solve_Lt(self, z: np.ndarray) -> np.ndarray:
        """Return ``x`` with ``Cov(x) = Q^{-1}`` when ``z`` is standard normal."""
        raise NotImplementedError

    def sample(self, b: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        """Draw from ``N(Q^{-1} b, Q^{-1})``."""
        z = rng.standard_normal(len(b))
        return self.solve(b) + self.solve_Lt(z)


class _CholmodFactor(CholeskyFactor):
    def __init__(self, factor):
        self._f = factor

    def solve(self, b):
        return self._f.solve_A(np.asarray(b, dtype=float))

    def logdet(self):
        return float(self._f.logdet())

    def solve_Lt(self, z):
        w = self._f.solve_Lt(np.asarray(z, dtype=float), use_LDLt_decomposition=False)
        return self._f.apply_Pt(w)


class _BandedFactor(CholeskyFactor):
    def __init__(self, perm, cb):
        self.perm = perm
        self.cb = cb
        self.inv = np.empty_like(perm)
        self.inv[perm] = np.arange(len(perm))

    def solve(self, b):
        x = sla.cho_solve_banded((self.cb, True), np.asarray(b, float)[self.perm])
        return x[self.inv]

    def logdet(self):
        return 2.0 * float(np.sum(np.log(self.cb[0])))

    def solve_Lt(self, z):
        x, info = lapack.dtbtrs(self.cb, np.asarray(z, float)[:, None], uplo="L", trans="T")
        if info != 0:
            raise NotPositiveDefiniteError(f"banded triangular solve failed (info={info})")
        return x[:, 0][self.inv]


class _DenseFactor(CholeskyFactor):
    def __init__(self, perm, L):
        self.perm = perm
        self.L = L
        self.inv = np.empty_like(perm)
        self.inv[perm] = np.arange(len(perm))

    def solve(self, b):
        x = sla.cho_solve((self.L, True), np.asarray(b, float)[self.perm])
        return x[self.inv]

    def logdet(self):
        return 2.0 * float(np.sum(np.log(np.diag(self.L))))

    def solve_Lt(self, z):
        x = sla.solve_triangular(self.L, np.asarray(z, float), lower=True, trans="T")
        return x[self.inv]


class SparseCholesky:
    """Symbolic analysis for one sparsity pattern, reusable across values.

    Parameters
    ----------
    pattern : sparse matrix
        Symmetric matrix whose nonzero pattern contains that of every matrix
        later passed to :meth:`factor`.
    backend : {"cholmod", "banded"}, optional
        Defaults to CHOLMOD when scikit-sparse is importable.
    """

    def __init__(self, pattern, backend: str | None = None):
        self.backend = backend or BACKEND
        if self.backend == "cholmod" and _cholmod is None:
            raise ImportError("scikit-sparse is not installed")
        A = sp.csc_matrix(pattern, dtype=float)
        self.n = A.shape[0]
        if self.backend == "cholmod":
            # analysis on a pattern-only matrix with a dominant diagonal
            P = sp.csc_matrix((np.ones_like(A.data), A.indices, A.indptr), shape=A.shape)
            P = P + sp.identity(self.n, format="csc") * self.n
            self._symbolic = _cholmod.analyze(P, ordering_method="amd")
        else:
            perm = reverse_cuthill_mckee(sp.csr_matrix(abs(A) + sp.identity(self.n)), symmetric_mode=True)
            self.perm = np.asarray(perm, dtype=np.int64)
            Ap = sp.coo_matrix(A.tocsr()[self.perm][:, self.perm])
            bw = int(np.max(np.abs(Ap.row - Ap.col))) if Ap.nnz else 0
            self.bandwidth = bw
            self.dense = self.n <= 64 or bw > self.n // 3

    def factor(self, Q) -> CholeskyFactor:
        Q = sp.csc_matrix(Q, dtype=float)
        if Q.shape != (self.n, self.n):
            raise ValueError(f"matrix shape {Q.shape} does not match analysed size {self.n}")
        if self.backend == "cholmod":
            try:
                f = self._symbolic.cholesky(Q)
            except _cholmod.CholmodNotPositiveDefiniteError as exc:
                raise NotPositiveDefiniteError(str(exc)) from None
            # simplicial LDL' does not raise on indefinite input
            if not np.all(f.D() > 0.0):
                raise NotPositiveDefiniteError("matrix is not positive definite")
            return _CholmodFactor(f)
        Qp = Q.tocsr()[self.perm][:, self.perm]
        if self.dense:
            try:
                L = sla.cholesky(Qp.toarray(), lower=True, check_finite=True)
            except (sla.LinAlgError, ValueError) as exc:
                raise NotPositiveDefiniteError(str(exc)) from None
            return _DenseFactor(self.perm, L)
        coo = sp.tril(Qp).tocoo()
        if coo.nnz and int(np.max(coo.row - coo.col)) > self.bandwidth:
            raise ValueError("matrix pattern exceeds the analysed pattern")
        ab = np.zeros((self.bandwidth + 1, self.n))
        ab[coo.row - coo.col, coo.col] = coo.data
        try:
            cb = sla.cholesky_banded(ab, lower=True)
        except (sla.LinAlgError, ValueError) as exc:
            raise NotPositiveDefiniteError(str(exc)) from None
        return _BandedFactor(self.perm, cb)


def factorize(Q, backend: str | None = None) -> CholeskyFactor:
    """One-off factorisation (analysis plus numeric factor)."""
    return SparseCholesky(Q, backend=backend).factor(Q)
