import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from numpy.testing import assert_allclose
from scipy import integrate, stats

from spatex.evd import (
    DomainError,
    GevParams,
    ReturnSpec,
    crps_gev,
    crps_numeric,
    gev_cdf,
    gev_fit,
    gev_logpdf,
    gev_nll_grad,
    gev_quantile,
    gev_rvs,
    pit,
    relative_change,
    return_level,
)

xis = st.floats(-0.45, 0.45)
mus = st.floats(-50, 50)
sigmas = st.floats(0.05, 20)


def test_cdf_known_values():
    assert_allclose(gev_cdf(0.0, GevParams(0, 1, 0)), np.exp(-1), rtol=1e-15)
    assert gev_cdf(2.0, GevParams(0, 1, -0.5)) == 1.0
    assert_allclose(gev_cdf(2.0, GevParams(0, 1, 0.5)), np.exp(-0.25), rtol=1e-15)
    assert gev_cdf(-2.5, GevParams(0, 1, 0.5)) == 0.0


def test_cdf_matches_scipy():
    # scipy's genextreme uses c = -xi
    x = np.linspace(-3, 8, 41)
    for xi in (-0.3, -1e-9, 0.0, 1e-9, 0.25):
        p = GevParams(1.5, 2.0, xi)
        # below |xi| = 1e-8 the Gumbel limit is used, an O(xi z^2) relative approximation
        tol = 1e-9 if abs(xi) == 0 or abs(xi) > 1e-8 else 1e-7
        assert_allclose(gev_cdf(x, p), stats.genextreme.cdf(x, -xi, loc=1.5, scale=2.0), rtol=tol, atol=1e-300)
        ok = np.isfinite(stats.genextreme.logpdf(x, -xi, loc=1.5, scale=2.0))
        assert_allclose(gev_logpdf(x, p)[ok], stats.genextreme.logpdf(x, -xi, loc=1.5, scale=2.0)[ok], rtol=tol)


def test_continuity_in_xi_at_zero():
    x = np.linspace(-2, 6, 17)
    g = gev_cdf(x, GevParams(0, 1, 0.0))
    for eps in (1e-7, -1e-7, 1e-9):
        assert_allclose(gev_cdf(x, GevParams(0, 1, eps)), g, atol=1e-6)


@given(mus, sigmas, xis, st.floats(1e-6, 1 - 1e-6))
@settings(max_examples=200, deadline=None)
def test_quantile_round_trip(mu, sigma, xi, u):
    p = GevParams(mu, sigma, xi)
    assert_allclose(gev_cdf(gev_quantile(u, p), p), u, rtol=1e-10, atol=1e-13)


def test_quantile_domain():
    with pytest.raises(DomainError):
        gev_quantile(1.0, GevParams(0, 1, 0))
    with pytest.raises(DomainError):
        GevParams(0, -1, 0)
    with pytest.raises(DomainError):
        gev_cdf(np.nan, GevParams(0, 1, 0))


def test_density_integrates_to_one():
    for xi in (-0.4, 0.0, 0.3):
        p = GevParams(0.3, 1.7, xi)
        lo = -np.inf if xi <= 0 else 0.3 - 1.7 / xi
        hi = np.inf if xi >= 0 else 0.3 - 1.7 / xi
        val, _ = integrate.quad(lambda t: np.exp(gev_logpdf(t, p)), lo, hi, epsabs=1e-12, limit=200)
        assert abs(val - 1) < 1e-6


def _nll(theta, x):
    val, _ = gev_nll_grad(GevParams(*theta), x)
    return val


@pytest.mark.parametrize("xi", [-0.3, -1e-10, 0.0, 1e-6, 0.2])
def test_gradient_matches_finite_differences(xi):
    rng = np.random.default_rng(4)
    p = GevParams(2.0, 1.3, xi)
    x = gev_rvs(p, 200, rng)
    theta = np.array([2.1, 1.25, xi + 0.01])
    _, g = gev_nll_grad(GevParams(*theta), x)
    fd = np.empty(3)
    for j in range(3):
        h = np.zeros(3)
        h[j] = 1e-6
        fd[j] = (_nll(theta + h, x) - _nll(theta - h, x)) / 2e-6
    assert_allclose(g, fd, rtol=1e-4, atol=1e-6)


def test_nll_off_support_is_infinite():
    val, g = gev_nll_grad(GevParams(0, 1, 0.5), np.array([-5.0, 1.0]))
    assert val == np.inf and np.all(np.isnan(g))


def test_fit_recovers_parameters():
    rng = np.random.default_rng(11)
    p = GevParams(10.0, 3.0, 0.1)
    x = gev_rvs(p, 5000, rng)
    est, cov, nll = gev_fit(x)
    se = np.sqrt(np.diag(cov))
    assert np.all(np.abs(np.array([est.mu, est.sigma, est.xi]) - [10, 3, 0.1]) < 4 * se)
    assert_allclose(nll, gev_nll_grad(est, x)[0])


def test_return_level_examples():
    assert_allclose(return_level(ReturnSpec(100), GevParams(0, 1, 0)), -np.log(-np.log(0.99)), rtol=1e-12)
    assert_allclose(-np.log(-np.log(0.99)), 4.60015, atol=1e-5)
    p = GevParams(5, 2, 0.1)
    assert return_level(ReturnSpec(2), p) < return_level(ReturnSpec(100), p)
    with pytest.raises(DomainError):
        ReturnSpec(1)
    assert_allclose(relative_change(110.0, 100.0), 10.0)


# Frozen values of the quantile-score integral 2 * int_0^1 (1{y < Q(u)} - u) (Q(u) - y) du,
# evaluated once by adaptive quadrature at tolerance 1e-13.
CRPS_ORACLE = [
    ((1.3, 0.5, 1.2, 0.2), 0.40071535743542996),
    ((0.0, 0.0, 1.0, 0.0), 0.32283635313262793),
    ((-2.0, 1.0, 2.0, -0.3), 2.6059005933522235),
    ((10.0, 2.0, 1.5, 0.45), 5.182547112942787),
    ((3.0, 1.0, 0.5, -0.6), 1.6579169049092142),
]


@pytest.mark.parametrize("case,expected", CRPS_ORACLE)
def test_crps_against_quantile_score_oracle(case, expected):
    y, mu, sigma, xi = case
    assert_allclose(crps_gev(y, GevParams(mu, sigma, xi)), expected, rtol=1e-10)


@given(st.floats(-20, 20), mus, sigmas, xis, st.floats(-10, 10))
@settings(max_examples=100, deadline=None)
def test_crps_translation_equivariance_and_sign(y, mu, sigma, xi, c):
    p = GevParams(mu, sigma, xi)
    a = crps_gev(y, p)
    assert a >= 0
    assert_allclose(crps_gev(y + c, p.shift(c)), a, rtol=1e-8, atol=1e-9 * sigma)


def test_crps_heavy_tail_falls_back_to_quadrature():
    p = GevParams(0, 1, 1.2)
    with pytest.warns(RuntimeWarning):
        v = crps_gev(1.0, p)
    assert v == pytest.approx(crps_numeric(1.0, p))


def test_pit_is_uniform_for_true_model():
    rng = np.random.default_rng(2)
    p = GevParams(np.linspace(0, 5, 4000), 1.5, 0.15)
    u = pit(gev_rvs(p, rng=rng), p)
    assert stats.kstest(u, "uniform").pvalue > 0.01
