import math

import numpy as np
import pytest

from splitgev.errors import ValidationError
from splitgev.gevdist import GevParams, gev_quantile
from splitgev.meshfem import build_projection, structured_mesh
from splitgev.predict import (
    PredictionGrid,
    StreamingMoments,
    location_surface_sample,
    project_field_sample,
    quantile_surface,
)
from splitgev.raster import Raster, RasterMeta
from splitgev.splitsampler import ChainTrace


@pytest.fixture
def setup():
    mesh = structured_mesh(0.0, 10.0, 0.0, 10.0, 4, 4)
    meta = RasterMeta(12, 12, -1.0, -1.0, 1.0)  # a ring of cells lies outside the mesh
    c = meta.cell_centers()
    cov = Raster(meta, (2.0 + 0.1 * c[:, 0] + 0.05 * c[:, 1]).reshape(meta.shape))
    return mesh, cov, PredictionGrid(cov, mesh)


def make_trace(samples, n_nodes, p=2):
    names = ["xi"] + [f"beta_mu_{k + 1}" for k in range(p)] + [f"u_mu_{k + 1}" for k in range(n_nodes)]
    names += [f"beta_tau_{k + 1}" for k in range(p)] + [f"u_tau_{k + 1}" for k in range(n_nodes)]
    return ChainTrace(names, np.asarray(samples, dtype=float))


def test_project_constant_and_affine(setup):
    mesh, cov, grid = setup
    A = grid.A
    out = project_field_sample(np.ones(mesh.n_nodes), A)
    assert np.all(np.isnan(out[~A.inside]))
    np.testing.assert_allclose(out[A.inside], 1.0, atol=1e-12)
    u = 1.0 + 2.0 * mesh.nodes[:, 0] - mesh.nodes[:, 1]
    c = cov.meta.cell_centers()
    np.testing.assert_allclose(project_field_sample(u, A)[A.inside], (1 + 2 * c[:, 0] - c[:, 1])[A.inside], atol=1e-10)
    with pytest.raises(ValidationError):
        project_field_sample(np.ones(3), A)


def test_grid_point_on_node():
    mesh = structured_mesh(0.0, 2.0, 0.0, 2.0, 3, 3)
    A = build_projection(mesh, [[1.0, 1.0]])
    u = np.arange(9.0)
    assert project_field_sample(u, A)[0] == u[4]


def test_location_surface(setup):
    mesh, cov, grid = setup
    A = grid.A
    x = cov.values.ravel()
    out = location_surface_sample([3.0, 0.0], np.zeros(mesh.n_nodes), x, A)
    np.testing.assert_allclose(out[A.inside], 3.0)
    out = location_surface_sample([0.0, 1.0], np.zeros(mesh.n_nodes), x, A)
    np.testing.assert_allclose(out[A.inside], x[A.inside])
    out = location_surface_sample([0.0, 1.0], np.zeros(mesh.n_nodes), x, A, log_covariate=True)
    np.testing.assert_allclose(out[A.inside], np.log(x[A.inside]))


def test_gumbel_quantile_surface(setup):
    mesh, cov, grid = setup
    n = mesh.n_nodes
    tr = make_trace([np.r_[0.0, np.zeros(2 + n + 2 + n)]], n)
    out = quantile_surface([tr], [0.9], grid)
    q = out["q0.9_mean"].values
    assert np.all(np.isnan(q[~grid.active.reshape(q.shape)]))
    np.testing.assert_allclose(q[grid.active.reshape(q.shape)], -math.log(-math.log(0.9)), atol=1e-14)
    assert out["q0.9_mean"].meta == cov.meta


def test_quantile_surface_hand_computed(setup):
    mesh, cov, grid = setup
    n = mesh.n_nodes
    rng = np.random.default_rng(0)
    rows = []
    for k in range(3):
        rows.append(np.r_[0.1 * k, [20.0 + k, 2.0], rng.normal(size=n), [1.0, 0.5], rng.normal(0, 0.1, n)])
    tr = make_trace(rows, n)
    out = quantile_surface([tr], [0.5, 0.95], grid)
    cell = grid.index[17]
    x = cov.values.ravel()[cell]
    a = grid.A.matrix[cell].toarray().ravel()
    qs = []
    for r in rows:
        bm, um = r[1:3], r[3 : 3 + n]
        bt, ut = r[3 + n : 5 + n], r[5 + n :]
        mu = bm[0] + bm[1] * x + a @ um
        tau = bt[0] + bt[1] * math.log(x) + a @ ut
        qs.append(gev_quantile(0.95, GevParams(mu, tau, r[0])))
    r_, c_ = divmod(cell, cov.meta.ncols)
    assert out["q0.95_mean"].values[r_, c_] == pytest.approx(np.mean(qs), rel=1e-12)
    assert out["q0.95_sd"].values[r_, c_] == pytest.approx(np.std(qs, ddof=1), rel=1e-10)
    assert np.all(out["q0.95_mean"].values[grid.active.reshape(12, 12)]
                  >= out["q0.5_mean"].values[grid.active.reshape(12, 12)])
    assert np.all(out["u_mu_sd"].values[grid.active.reshape(12, 12)] > 0)


def test_streaming_moments_match_two_pass():
    rng = np.random.default_rng(1)
    X = rng.normal(5.0, 2.0, (500, 100))
    acc = StreamingMoments(100)
    for s in range(0, 500, 37):
        acc.update(X[s : s + 37])
    np.testing.assert_allclose(acc.mean, X.mean(axis=0), rtol=1e-10, atol=1e-10)
    np.testing.assert_allclose(acc.sd(), X.std(axis=0, ddof=1), rtol=1e-10, atol=1e-10)
    a, b = StreamingMoments(100), StreamingMoments(100)
    a.update(X[:200])
    b.update(X[200:])
    m = a.merge(b)
    np.testing.assert_allclose(m.variance(), X.var(axis=0, ddof=1), rtol=1e-10)


def test_missing_field_columns(setup):
    _, _, grid = setup
    tr = ChainTrace(["xi", "beta_mu_1"], np.zeros((2, 2)))
    with pytest.raises(ValidationError):
        quantile_surface([tr], [0.5], grid)
