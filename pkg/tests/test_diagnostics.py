import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from splitgev.diagnostics import (
    autocorrelation,
    cdf_comparison,
    effective_sample_size,
    gelman_rubin,
    running_mean,
    summarize,
    trend_lrt,
)
from splitgev.errors import ValidationError
from splitgev.gevdist import GevParams, gev_sample


def test_gr_identical_iid_chains():
    x = np.random.default_rng(0).normal(size=10_000)
    assert gelman_rubin([x, x]).value == pytest.approx(1.0, abs=0.01)


def test_gr_separated_chains():
    rng = np.random.default_rng(1)
    gr = gelman_rubin([rng.normal(0, 1, 1000), rng.normal(10, 1, 1000)])
    # between-chain variance ~ 50 against unit within-chain variance
    assert gr.value > 1.5
    assert gr.value == pytest.approx(np.sqrt(0.999 + 1.5 * 50), rel=0.05)


def test_gr_constant_chains_flagged():
    gr = gelman_rubin(np.ones((3, 20)))
    assert gr.value == 1.0 and gr.degenerate


def test_gr_needs_two_chains():
    with pytest.raises(ValidationError):
        gelman_rubin(np.zeros((1, 20)))


@given(st.floats(-100, 100), st.floats(0.01, 100), st.integers(0, 100))
@settings(max_examples=30, deadline=None)
def test_gr_affine_invariant(a, b, seed):
    x = np.random.default_rng(seed).normal(size=(3, 200)) + np.arange(3)[:, None] * 0.3
    assert gelman_rubin(a + b * x).value == pytest.approx(gelman_rubin(x).value, rel=1e-9)


def test_acf_basics():
    x = np.random.default_rng(2).normal(size=100_000)
    acf = autocorrelation(x, 20)
    assert acf.values[0] == 1.0
    assert abs(acf.values[10]) < 0.02
    c = autocorrelation(np.full(50, 3.0), 5)
    assert c.degenerate and list(c.values) == [1, 0, 0, 0, 0, 0]
    with pytest.raises(ValidationError):
        autocorrelation(np.ones(3), 3)


def test_acf_matches_direct_formula():
    x = np.random.default_rng(3).normal(size=300)
    d = x - x.mean()
    ref = [d[: len(d) - k] @ d[k:] / (d @ d) for k in range(6)]
    np.testing.assert_allclose(autocorrelation(x, 5).values, ref, atol=1e-12)


def test_acf_halves_agree():
    rng = np.random.default_rng(4)
    e = rng.normal(size=100_000)
    x = np.empty_like(e)
    x[0] = e[0]
    for i in range(1, len(e)):
        x[i] = 0.6 * x[i - 1] + e[i]
    a = autocorrelation(x[:50_000], 20).values
    b = autocorrelation(x[50_000:], 20).values
    assert np.max(np.abs(a - b)) < 0.05


def test_running_mean():
    np.testing.assert_array_equal(running_mean(np.full(7, 2.5)), 2.5)
    np.testing.assert_allclose(running_mean([1, 2, 3]), [1, 1.5, 2])


def test_ess_of_ar1():
    rng = np.random.default_rng(5)
    e = rng.normal(size=50_000)
    x = np.empty_like(e)
    x[0] = e[0]
    for i in range(1, len(e)):
        x[i] = 0.5 * x[i - 1] + e[i]
    # integrated autocorrelation time (1 + rho) / (1 - rho) = 3
    assert effective_sample_size(x) == pytest.approx(50_000 / 3, rel=0.1)


def test_summarize():
    s = summarize([np.full((10, 1), 4.0)], 0, ["c"])
    assert s.row("c")["mean"] == 4.0 and s.row("c")["sd"] == 0.0
    u = np.random.default_rng(6).uniform(size=(500_000, 1))
    s = summarize([u[:250_000], u[250_000:]], 0, ["u"])
    assert s.q025[0] == pytest.approx(0.025, abs=0.005)
    a, b = np.random.default_rng(7).normal(size=(2, 50, 3))
    s1 = summarize([a, b], 10)
    s2 = summarize([np.vstack([a[10:], b[10:]])], 0)
    np.testing.assert_allclose(s1.mean, s2.mean)
    np.testing.assert_allclose(s1.q975, s2.q975)
    assert np.all(s1.q025 <= s1.q975)
    with pytest.raises(ValidationError):
        summarize([a], 50)


def test_summary_csv(tmp_path):
    s = summarize([np.arange(20.0).reshape(10, 2)], 0, ["a", "b"])
    s.to_csv(tmp_path / "s.csv")
    lines = (tmp_path / "s.csv").read_text().splitlines()
    assert lines[0] == "parameter,q025,mean,q975,sd" and lines[1].startswith("a,")


def test_cdf_comparison():
    p = GevParams(10.0, 1.0, 0.1)
    y = gev_sample(p, 10_000, np.random.default_rng(8))
    tab = cdf_comparison(y, p)
    assert np.max(np.abs(tab[:, 1] - tab[:, 2])) < 0.02
    assert np.all(np.diff(tab[:, 2]) >= 0)
    one = cdf_comparison([12.0], p)
    assert one[0, 1] == 1.0


def test_trend_lrt():
    rng = np.random.default_rng(9)
    years = np.tile(np.arange(50), 20)
    stat, p = trend_lrt(rng.normal(size=1000), years)
    assert stat >= 0 and p > 0.001
    stat, p = trend_lrt(rng.normal(size=1000) + 5.0 * years / 49, years)
    assert p < 1e-6
    with pytest.raises(ValidationError):
        trend_lrt([1.0, 2.0, 3.0], [1, 1, 2])


@given(st.integers(0, 1000))
@settings(max_examples=25, deadline=None)
def test_trend_statistic_nonnegative(seed):
    rng = np.random.default_rng(seed)
    assert trend_lrt(rng.normal(size=30), np.arange(30) % 7)[0] >= 0
