import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bdsfk.regression import (NodeRegressor, RegressionSpec, RegressionWarning,
                              TangentRegressor)

RNG = np.random.default_rng(0)
X1 = RNG.normal(size=(4000, 1))


@pytest.mark.parametrize("kw", [dict(basis_kind="spline"), dict(degree=-1), dict(bins=0),
                                dict(ridge=-1.0), dict(degree=1.5)])
def test_spec_validation(kw):
    with pytest.raises(ValueError):
        RegressionSpec(**kw)


@given(c=st.lists(st.floats(-5, 5), min_size=4, max_size=4))
@settings(max_examples=25, deadline=None)
def test_polynomial_in_span_is_reproduced(c):
    x = X1[:, 0]
    target = c[0] + c[1] * x + c[2] * x ** 2 + c[3] * x ** 3
    reg = NodeRegressor(RegressionSpec(degree=3, ridge=0.0), X1)
    fitted, _ = reg.project(target[:, None])
    np.testing.assert_allclose(fitted[:, 0], target, atol=1e-8 * (1 + np.abs(target).max()))


def test_projection_preserves_sample_mean():
    target = np.sin(3 * X1) + RNG.normal(size=X1.shape)
    reg = NodeRegressor(RegressionSpec(degree=2, ridge=1e-2), X1)
    fitted, _ = reg.project(target)
    assert abs(fitted.mean() - target.mean()) < 1e-12


def test_two_dimensional_basis_size():
    X = RNG.normal(size=(500, 2))
    reg = NodeRegressor(RegressionSpec(degree=2), X)
    assert reg.basis.size == 6  # 1, x, y, x^2, xy, y^2
    target = (1 + X[:, 0] * X[:, 1])[:, None]
    np.testing.assert_allclose(reg.project(target)[0], target, atol=1e-6)


def test_degenerate_state_gives_sample_mean():
    X = np.full((300, 1), 0.7)
    t = RNG.normal(size=(300, 2))
    reg = NodeRegressor(RegressionSpec(degree=3), X)
    fitted, _ = reg.project(t)
    np.testing.assert_allclose(fitted, np.broadcast_to(t.mean(axis=0), t.shape), atol=1e-12)


def test_predict_at_new_points():
    reg = NodeRegressor(RegressionSpec(degree=2, ridge=0.0), X1)
    coef = reg.fit((2 * X1[:, 0] ** 2 - 1)[:, None])
    xs = np.array([[-1.0], [0.0], [0.5]])
    np.testing.assert_allclose(reg.predict(coef, xs)[:, 0], 2 * xs[:, 0] ** 2 - 1, atol=1e-8)


def test_piecewise_linear_reproduces_hinge():
    spec = RegressionSpec(basis_kind="piecewise-linear", bins=4, ridge=0.0)
    reg = NodeRegressor(spec, X1)
    kn = reg.basis.knots[1] * reg.basis.scale[0] + reg.basis.mean[0]
    target = (1 + 0.5 * X1[:, 0] + np.maximum(X1[:, 0] - kn, 0))[:, None]
    np.testing.assert_allclose(reg.project(target)[0], target, atol=1e-8)


def test_ill_conditioned_gram_warns_and_stays_finite():
    # three distinct states cannot support a degree-5 basis (rank-deficient Gram)
    X = np.repeat([[-1.0], [0.0], [2.0]], 20, axis=0)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        reg = NodeRegressor(RegressionSpec(degree=5, ridge=0.0), X)
    assert any(issubclass(c.category, RegressionWarning) for c in caught)
    assert np.isfinite(reg.project(X ** 2)[0]).all()


def test_project_increment_recovers_linear_field():
    M = 40000
    X = RNG.normal(size=(M, 1))
    w = RNG.normal(size=(M, 1))
    dt = 0.01
    field = 1.0 + 0.5 * X[:, 0]
    dev = (field * w[:, 0] * np.sqrt(dt))[:, None] + 0.01 * RNG.normal(size=(M, 1))
    reg = NodeRegressor(RegressionSpec(degree=1), X)
    Z, (coef, resid) = reg.project_increment(dev, w, np.sqrt(dt))
    assert Z.shape == (M, 1, 1)
    assert np.abs(Z[:, 0, 0] - field).max() < 0.05
    xs = np.array([[0.0], [1.0]])
    np.testing.assert_allclose(reg.predict_increment(coef, xs)[:, 0, 0], [1.0, 1.5], atol=0.02)
    assert resid.shape == (M, 1)
    assert abs(resid.std() - 0.01) < 1e-3


def test_tangent_regressor_recovers_field_times_tangent():
    M, q = 3000, 2
    X = RNG.normal(size=(M, 1))
    Tan = RNG.normal(size=(M, 1, q))
    v = 2.0 - X[:, 0] + 0.3 * X[:, 0] ** 2
    target = (v[:, None] * Tan[:, 0, :])[:, None, :]  # (M, k=1, q)
    reg = TangentRegressor(RegressionSpec(degree=2, ridge=0.0), X, Tan)
    fitted, fit = reg.project(target)
    np.testing.assert_allclose(fitted, target, atol=1e-8)
    Xn = np.array([[0.0], [1.0]])
    Tn = np.ones((2, 1, q))
    np.testing.assert_allclose(reg.predict(fit, Xn, Tn)[:, 0, 0], [2.0, 1.3], atol=1e-8)


def test_tangent_project_increment_shapes_and_recovery():
    M, q = 20000, 1
    X = RNG.normal(size=(M, 1))
    Tan = 1 + 0.1 * RNG.normal(size=(M, 1, q))
    w = RNG.normal(size=(M, 1))
    dt = 0.02
    v = 1.0 + X[:, 0]
    dev = (v * Tan[:, 0, 0] * w[:, 0] * np.sqrt(dt))[:, None, None]
    reg = TangentRegressor(RegressionSpec(degree=1, ridge=0.0), X, Tan)
    Z, (_, resid) = reg.project_increment(dev, w, np.sqrt(dt))
    assert Z.shape == (M, 1, 1, q)
    np.testing.assert_allclose(Z[:, 0, 0, 0], v * Tan[:, 0, 0], atol=1e-8)
    assert np.abs(resid).max() < 1e-9
