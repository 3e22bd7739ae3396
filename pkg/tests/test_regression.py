import numpy as np
import pytest
from hypothesis import given, strategies as st

from rankgame.regression import (BasisTooLargeError, RegressionBasis, SingularRegressionError, fit_design,
                                 full_coefficients)


def _state(m, n, seed=0):
    return -np.sort(-np.random.default_rng(seed).normal(size=(m, n)), axis=1)


@pytest.mark.parametrize("kind", RegressionBasis.KINDS)
@pytest.mark.parametrize("n", [1, 2, 3])
def test_design_width_matches_size(kind, n):
    b = RegressionBasis(2, kind=kind, knots=5)
    x = _state(400, n)
    d, n_poly = b.design(x, x[:, 0], x[:, 0] + 1)
    assert d.shape == (400, b.size(n))
    assert n_poly == {1: 3, 2: 6, 3: 10}[n]
    assert np.all(d[:, 0] == 1.0)


def test_basis_too_large():
    with pytest.raises(BasisTooLargeError):
        RegressionBasis(3).check_size(3, 100)
    RegressionBasis(1, include_barrier_features=False).check_size(1, 20)


def test_polynomial_targets_are_reproduced():
    x = _state(2000, 2)
    b = RegressionBasis(2, include_barrier_features=False)
    d, n_poly = b.design(x)
    target = 1 + x[:, 0] - 2 * x[:, 0] * x[:, 1] + 0.5 * x[:, 1] ** 2
    fit = fit_design(d, n_poly, target, step=0)
    np.testing.assert_allclose(fit.fitted, target, atol=1e-9)


@given(st.integers(0, 50))
def test_projection_is_idempotent(seed):
    x = _state(300, 2, seed)
    d, n_poly = RegressionBasis(2, kind="spline", knots=4).design(x, np.abs(x[:, 0]), np.abs(x[:, 0]) + 1)
    y = np.random.default_rng(seed).normal(size=300)
    fit = fit_design(d, n_poly, y, step=0)
    np.testing.assert_allclose(fit.project(fit.fitted), fit.fitted, atol=1e-8)
    coef = full_coefficients(fit, y, d.shape[1])
    np.testing.assert_allclose(d @ coef, fit.fitted, atol=1e-8)


def test_duplicate_columns_are_dropped_or_reported():
    x = _state(200, 1)
    d, n_poly = RegressionBasis(1, include_barrier_features=False).design(x)
    dup = np.column_stack([d, d[:, 1]])
    fit = fit_design(dup, n_poly, x[:, 0], step=3)
    assert fit.dropped == 1
    np.testing.assert_allclose(fit.fitted, x[:, 0], atol=1e-10)
    const = np.column_stack([np.ones(50), np.full(50, 2.0)])  # x identically constant
    with pytest.raises(SingularRegressionError, match="step 7"):
        fit_design(const, 2, np.ones(50), step=7, drop_degenerate=False)


def test_constant_barrier_features_are_harmless():
    x = _state(500, 1)
    b = RegressionBasis(2)
    d, n_poly = b.design(x, np.zeros(500), np.ones(500))
    fit = fit_design(d, n_poly, x[:, 0] ** 2, step=0)
    np.testing.assert_allclose(fit.fitted, x[:, 0] ** 2, atol=1e-9)
