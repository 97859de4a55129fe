"""Backend selection for the GEV site kernels.

The compiled extension is used when it imports; otherwise the numpy
implementation. Set ``SPLITGEV_PURE_PYTHON=1`` to force the fallback.
"""
from __future__ import annotations

import os

import numpy as np

from . import _gevkernels_py

_impl = _gevkernels_py
BACKEND = "python"

if not os.environ.get("SPLITGEV_PURE_PYTHON"):
    try:
        from . import _gevkernels as _compiled
    except ImportError:  # extension not built
        pass
    else:
        _impl = _compiled
        BACKEND = "cython"


def _f64(a):
    return np.ascontiguousarray(a, dtype=np.float64)


def _i64(a):
    return np.ascontiguousarray(a, dtype=np.int64)


def logpdf(y, mu, tau, xi):
    y, mu, tau = np.broadcast_arrays(*(np.asarray(a, dtype=np.float64) for a in (y, mu, tau)))
    shape = y.shape
    out = _impl.logpdf(_f64(y.ravel()), _f64(mu.ravel()), _f64(tau.ravel()), float(xi))
    return np.asarray(out).reshape(shape)


def site_loglik(y, offsets, mu, tau, xi):
    return np.asarray(_impl.site_loglik(_f64(y), _i64(offsets), _f64(mu), _f64(tau), float(xi)))


def site_derivs(y, offsets, mu, tau, xi):
    f, g, h = _impl.site_derivs(_f64(y), _i64(offsets), _f64(mu), _f64(tau), float(xi))
    return np.asarray(f), np.asarray(g), np.asarray(h)


def xi_derivs(y, offsets, mu, tau, xi):
    f, d1, d2 = _impl.xi_derivs(_f64(y), _i64(offsets), _f64(mu), _f64(tau), float(xi))
    return float(f), float(d1), float(d2)


def use_backend(name: str) -> None:
    """Switch backend at runtime (``"python"`` or ``"cython"``); used by tests and benchmarks."""
    global _impl, BACKEND
    if name == "python":
        _impl = _gevkernels_py
    elif name == "cython":
        from . import _gevkernels as compiled

        _impl = compiled
    else:
        raise ValueError(f"unknown backend {name!r}")
    BACKEND = name
