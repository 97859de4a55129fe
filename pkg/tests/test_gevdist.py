import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate, stats

from splitgev.errors import DomainError, SupportError
from splitgev.gevdist import (
    GevParams,
    gev_cdf,
    gev_logpdf,
    gev_mean,
    gev_quantile,
    gev_sample,
    loglik_dxi_d2xi,
    quantile_array,
    site_loglik,
    site_loglik_grad_hess,
    total_loglik,
)
from oracles import genextreme_logpdf

xis = st.floats(-0.4, 0.4)
probs = st.floats(1e-6, 1 - 1e-6)


def test_logpdf_matches_scipy(kernel_backend):
    rng = np.random.default_rng(0)
    for xi in (-0.3, -0.05, 0.0, 1e-10, 0.07, 0.3):
        p = GevParams(40.0, 2.1, xi)
        y = gev_sample(p, 200, rng)
        np.testing.assert_allclose(gev_logpdf(y, p), genextreme_logpdf(y, 40.0, 2.1, xi), rtol=1e-10, atol=1e-12)


def test_cdf_matches_scipy():
    y = np.linspace(-5, 40, 50)
    for xi in (-0.2, 0.0, 0.25):
        ref = stats.genextreme.cdf(y, c=-xi, loc=3.0, scale=math.exp(1.2))
        np.testing.assert_allclose(gev_cdf(y, GevParams(3.0, 1.2, xi)), ref, atol=1e-14)


def test_support_edges():
    p = GevParams(0.0, 0.0, 0.5)  # lower endpoint -2
    assert gev_cdf(-3.0, p) == 0.0
    assert gev_logpdf(-3.0, p) == -np.inf
    q = GevParams(0.0, 0.0, -0.5)  # upper endpoint 2
    assert gev_cdf(3.0, q) == 1.0
    assert gev_logpdf(3.0, q) == -np.inf


def test_gumbel_quantile():
    p = GevParams(0.0, 0.0, 0.0)
    for pr in (0.1, 0.5, 0.95):
        assert gev_quantile(pr, p) == pytest.approx(-math.log(-math.log(pr)), abs=1e-15)


def test_gumbel_switch_is_continuous():
    y = np.linspace(-2, 8, 21)
    a = gev_logpdf(y, GevParams(0.0, 0.3, 0.999e-8))
    b = gev_logpdf(y, GevParams(0.0, 0.3, 1.001e-8))
    np.testing.assert_allclose(a, b, atol=1e-12)
    assert gev_quantile(0.9, GevParams(0.0, 0.0, 0.999e-8)) == pytest.approx(
        gev_quantile(0.9, GevParams(0.0, 0.0, 1.001e-8)), abs=1e-9
    )


def test_mean():
    assert gev_mean(GevParams(0.0, 0.0, 0.0)) == pytest.approx(np.euler_gamma, abs=1e-15)
    for xi in (-0.2, 0.1, 0.4):
        ref = stats.genextreme.mean(c=-xi, loc=2.0, scale=3.0)
        assert gev_mean(GevParams(2.0, math.log(3.0), xi)) == pytest.approx(ref, rel=1e-12)
    with pytest.raises(DomainError):
        gev_mean(GevParams(0.0, 0.0, 1.0))


def test_params_validate():
    with pytest.raises(DomainError):
        GevParams(float("nan"), 0.0, 0.1)
    with pytest.raises(DomainError):
        gev_quantile(1.0, GevParams(0.0, 0.0, 0.1))


@given(probs, xis, st.floats(-50, 50), st.floats(-2, 3))
@settings(max_examples=300, deadline=None)
def test_quantile_cdf_roundtrip(pr, xi, mu, tau):
    p = GevParams(mu, tau, xi)
    assert abs(gev_cdf(gev_quantile(pr, p), p) - pr) < 1e-12


@given(st.lists(probs, min_size=2, max_size=10), xis)
@settings(deadline=None)
def test_quantile_monotone(ps, xi):
    ps = np.sort(np.array(ps))
    q = gev_quantile(ps, GevParams(1.0, 0.5, xi))
    assert np.all(np.diff(q) >= 0)


def test_quantile_array_matches_scalar():
    mu = np.array([1.0, 2.0, 3.0])
    tau = np.array([0.1, -0.4, 0.7])
    for xi in (0.0, 0.2, -0.1):
        q = quantile_array(0.95, mu, tau, xi)
        ref = [gev_quantile(0.95, GevParams(m, t, xi)) for m, t in zip(mu, tau)]
        np.testing.assert_allclose(q, ref, rtol=1e-15)


def test_site_loglik_empty_and_total(kernel_backend):
    assert site_loglik([], GevParams(0.0, 0.0, 0.1)) == 0.0
    y = np.array([1.0, 2.0, 3.0, 5.0])
    off = np.array([0, 1, 1, 4])
    mu = np.array([0.5, 9.0, 2.0])
    tau = np.array([0.0, 1.0, 0.3])
    ref = genextreme_logpdf(y[:1], 0.5, 0.0, 0.1).sum() + genextreme_logpdf(y[1:], 2.0, 0.3, 0.1).sum()
    assert total_loglik(y, off, mu, tau, 0.1) == pytest.approx(ref, rel=1e-13)


def test_grad_hess_out_of_support_raises():
    with pytest.raises(SupportError):
        site_loglik_grad_hess([-10.0], GevParams(0.0, 0.0, 0.5))
    with pytest.raises(SupportError):
        loglik_dxi_d2xi(np.array([-10.0]), np.array([0, 1]), [0.0], [0.0], 0.5)


def richardson(fun, x, h):
    """Central difference with one Richardson step (error O(h^4))."""
    d1 = (fun(x + h) - fun(x - h)) / (2 * h)
    d2 = (fun(x + h / 2) - fun(x - h / 2)) / h
    return (4 * d2 - d1) / 3


def derivative_pairs(rng):
    """(analytic, numeric) pairs for all seven derivatives at a random case."""
    xi = rng.uniform(-0.3, 0.3)
    mu, tau = rng.normal(30, 5), rng.normal(1.5, 0.4)
    y = gev_sample(GevParams(mu, tau, xi), int(rng.integers(1, 40)), rng)
    off = np.array([0, len(y)])

    def f(m, t, x):
        return site_loglik(y, GevParams(m, t, x))

    def grad(m, t):
        return site_loglik_grad_hess(y, GevParams(m, t, xi))[0]

    def dxi(x):
        return loglik_dxi_d2xi(y, off, [mu], [tau], x)[0]

    g, H = site_loglik_grad_hess(y, GevParams(mu, tau, xi))
    d1, d2 = loglik_dxi_d2xi(y, off, [mu], [tau], xi)
    hm = 1e-3 * math.exp(tau)
    ht = 1e-3
    hx = 1e-3
    return [
        (g[0], richardson(lambda m: f(m, tau, xi), mu, hm)),
        (g[1], richardson(lambda t: f(mu, t, xi), tau, ht)),
        (H[0, 0], richardson(lambda m: grad(m, tau)[0], mu, hm)),
        (H[0, 1], richardson(lambda t: grad(mu, t)[0], tau, ht)),
        (H[1, 1], richardson(lambda t: grad(mu, t)[1], tau, ht)),
        (d1, richardson(lambda x: f(mu, tau, x), xi, hx)),
        (d2, richardson(dxi, xi, hx)),
    ]


def max_rel_error(pairs):
    return max(abs(a - b) / max(abs(a), abs(b), 1e-8) for a, b in pairs)


def test_derivatives_match_finite_differences(kernel_backend):
    rng = np.random.default_rng(42)
    worst = max(max_rel_error(derivative_pairs(rng)) for _ in range(40))
    assert worst < 1e-6


@pytest.mark.parametrize("xi", [0.0, 1e-9, 1e-4, 0.04, 0.06])
def test_xi_derivatives_near_series_switch(kernel_backend, xi):
    rng = np.random.default_rng(3)
    y = gev_sample(GevParams(10.0, 1.0, 0.05), 30, rng)
    off = np.array([0, len(y)])
    d1, d2 = loglik_dxi_d2xi(y, off, [10.0], [1.0], xi)
    f = lambda x: site_loglik(y, GevParams(10.0, 1.0, x))  # noqa: E731
    assert d1 == pytest.approx(richardson(f, xi, 1e-3), rel=1e-6)
    g = lambda x: loglik_dxi_d2xi(y, off, [10.0], [1.0], x)[0]  # noqa: E731
    assert d2 == pytest.approx(richardson(g, xi, 1e-3), rel=1e-6)


def test_density_integrates_to_one():
    for xi in (-0.3, 0.0, 0.3):
        p = GevParams(0.0, 0.0, xi)
        lo = -1 / xi if xi > 0 else -np.inf
        hi = -1 / xi if xi < 0 else np.inf
        val, _ = integrate.quad(lambda y: math.exp(float(gev_logpdf(y, p))), lo, hi, epsabs=1e-13, epsrel=1e-13, limit=400)
        assert val == pytest.approx(1.0, abs=1e-8)
