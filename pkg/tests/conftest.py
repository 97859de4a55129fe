import numpy as np
import pytest

from splitgev import kernels, sparsechol
from splitgev.lgm import ModelSpec, ObservationData
from splitgev.meshfem import build_projection, structured_mesh

try:
    from splitgev import _gevkernels  # noqa: F401

    HAVE_CYTHON = True
except ImportError:
    HAVE_CYTHON = False

KERNEL_BACKENDS = ["python"] + (["cython"] if HAVE_CYTHON else [])
CHOL_BACKENDS = ["banded"] + (["cholmod"] if sparsechol._cholmod is not None else [])


@pytest.fixture(params=KERNEL_BACKENDS)
def kernel_backend(request):
    previous = kernels.BACKEND
    kernels.use_backend(request.param)
    yield request.param
    kernels.use_backend(previous)


@pytest.fixture(params=CHOL_BACKENDS)
def chol_backend(request):
    return request.param


def tiny_model(seed=0, n_years=30, data=True):
    """Two sites on a four-node mesh."""
    rng = np.random.default_rng(seed)
    mesh = structured_mesh(0.0, 100.0, 0.0, 100.0, 2, 2)
    sites = np.array([[30.0, 40.0], [70.0, 55.0]])
    x = np.array([4.0, 6.5])
    X_mu = np.column_stack([np.ones(2), x])
    X_tau = np.column_stack([np.ones(2), np.log(x)])
    A = build_projection(mesh, sites)
    obs = None
    if data:
        from splitgev.gevdist import GevParams, gev_sample

        ys = [gev_sample(GevParams(60.0 + 10 * i, 2.3, 0.1), n_years, rng) for i in range(2)]
        obs = ObservationData.from_lists(ys, [np.arange(n_years)] * 2)
    return ModelSpec(X_mu, X_tau, A, mesh=mesh, data=obs)


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
