import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from numpy.testing import assert_allclose
from scipy import integrate

from spatex.smoothers import (
    ConfigurationError,
    SplineBasis,
    TensorBasis,
    basis_eval,
    loess,
    month_basis,
    penalty,
    quantile_knots,
)

KNOTS = np.array([0.0, 0.7, 1.5, 2.0, 3.2, 4.0])


def test_cardinal_basis_interpolates_knots():
    for b in (SplineBasis("cubic", KNOTS), SplineBasis("cyclic_cubic", KNOTS, period=5.0)):
        assert_allclose(basis_eval(b, KNOTS), np.eye(KNOTS.size), atol=1e-12)


def test_cubic_reproduces_linear_functions_with_zero_penalty():
    b = SplineBasis("cubic", KNOTS)
    coef = 2.0 - 0.5 * KNOTS
    x = np.linspace(0, 4, 50)
    assert_allclose(basis_eval(b, x) @ coef, 2.0 - 0.5 * x, atol=1e-12)
    assert abs(coef @ penalty(b) @ coef) < 1e-10


@pytest.mark.parametrize("kind,null_dim", [("cubic", 2), ("cyclic_cubic", 1)])
def test_penalty_symmetric_psd_with_expected_null_space(kind, null_dim):
    b = SplineBasis(kind, KNOTS, period=5.0 if kind == "cyclic_cubic" else None)
    S = penalty(b)
    assert_allclose(S, S.T, atol=1e-12)
    w = np.linalg.eigvalsh(S)
    assert w.min() > -1e-10 * w.max()
    assert np.sum(w < 1e-9 * w.max()) == null_dim


def test_penalty_equals_integrated_squared_second_derivative():
    # oracle: numerical second derivative of the fitted spline, integrated by quadrature
    rng = np.random.default_rng(3)
    b = SplineBasis("cubic", KNOTS)
    coef = rng.normal(size=KNOTS.size)
    h = 1e-4

    def f2(x):
        v = basis_eval(b, np.array([x - h, x, x + h])) @ coef
        return ((v[2] - 2 * v[1] + v[0]) / h**2) ** 2

    pts = list(KNOTS[1:-1])
    total = sum(integrate.quad(f2, a, c, limit=100)[0] for a, c in zip([0.0] + pts, pts + [4.0]))
    assert_allclose(coef @ penalty(b) @ coef, total, rtol=1e-4)


def test_cyclic_basis_is_periodic():
    b = month_basis(12)
    m = np.linspace(1, 12.9, 40)
    assert_allclose(basis_eval(b, m), basis_eval(b, m + 12.0), atol=1e-12)
    assert_allclose(basis_eval(b, m).sum(axis=1), 1.0, atol=1e-12)


def test_tensor_product_shapes_and_partition_of_unity():
    b1 = SplineBasis("cubic", np.linspace(0, 1, 4))
    b2 = SplineBasis("cubic", np.linspace(-1, 1, 5))
    t = TensorBasis((b1, b2))
    rng = np.random.default_rng(0)
    X = t(np.column_stack([rng.uniform(0, 1, 30), rng.uniform(-1, 1, 30)]))
    assert X.shape == (30, 20)
    assert_allclose(X.sum(axis=1), 1.0, atol=1e-12)
    pens = t.penalties()
    assert len(pens) == 2 and all(P.shape == (20, 20) for P in pens)


def test_configuration_errors():
    with pytest.raises(ConfigurationError):
        SplineBasis("cubic", [0.0, 1.0])
    with pytest.raises(ConfigurationError):
        SplineBasis("cyclic_cubic", [0.0, 1.0, 2.0], period=1.5)
    with pytest.raises(ConfigurationError):
        SplineBasis("quintic", [0.0, 1.0, 2.0])
    with pytest.raises(ConfigurationError):
        quantile_knots([1.0, 1.0, 2.0])


def test_quantile_knots_cover_range():
    x = np.random.default_rng(1).gamma(2.0, size=500)
    k = quantile_knots(x, 10)
    assert k.size == 10 and k[0] == x.min() and k[-1] == x.max()


def test_loess_matches_statsmodels_lowess_degree_one():
    sm = pytest.importorskip("statsmodels.nonparametric.smoothers_lowess")
    rng = np.random.default_rng(0)
    x = np.sort(rng.uniform(0, 10, 57))
    y = np.sin(x) + rng.normal(0, 0.3, 57)
    for span in (0.3, 0.75):
        ref = sm.lowess(y, x, frac=span, it=0, return_sorted=False)
        assert_allclose(loess(x, y, span=span, degree=1), ref, atol=1e-10)


@given(st.floats(-3, 3), st.floats(-3, 3), st.floats(-1, 1), st.floats(0.3, 1.0))
@settings(max_examples=30, deadline=None)
def test_loess_degree_two_reproduces_quadratics(a, b, c, span):
    x = np.linspace(0, 5, 40)
    y = a + b * x + c * x**2
    assert_allclose(loess(x, y, span=span, degree=2), y, atol=1e-8)
