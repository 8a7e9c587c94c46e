import numpy as np
import pytest

from bdsfk.coefficients import MissingDerivativeError, scalar_coefficients
from bdsfk.forward import (NonFiniteStateError, euler_forward, malliavin_DX, solve_forward,
                           tangent_flow)
from bdsfk.paths import TimeGrid, gen_bundle
from bdsfk.presets import make_preset


def test_heat_paths_are_shifted_brownian_motion(small_bundle):
    fw = euler_forward(make_preset("heat-quadratic"), [0.3], small_bundle)
    W = np.concatenate([np.zeros((small_bundle.M, 1)), np.cumsum(small_bundle.dW[:, :, 0], axis=1)],
                       axis=1)
    np.testing.assert_allclose(fw.X[:, :, 0], 0.3 + W, atol=1e-13)


def test_ou_tangent_is_deterministic(small_bundle):
    kappa = 0.5
    fw = solve_forward(make_preset("ou-linear", kappa=kappa), [1.0], small_bundle)
    dt = small_bundle.grid.dt
    expected = (1 - kappa * dt) ** np.arange(small_bundle.grid.N + 1)
    np.testing.assert_allclose(fw.gradX[:, :, 0, 0], np.broadcast_to(expected, fw.gradX.shape[:2]),
                               rtol=1e-13)


def test_tangent_matches_finite_difference_of_euler_map():
    coeffs = make_preset("random-coeff-sine")
    b = gen_bundle(4, TimeGrid(0.0, 1.0, 50), 200, 1, 1)
    eps = 1e-6
    fw = solve_forward(coeffs, [0.2], b)
    up = euler_forward(coeffs, [0.2 + eps], b).X
    dn = euler_forward(coeffs, [0.2 - eps], b).X
    fd = (up - dn)[:, :, 0] / (2 * eps)
    np.testing.assert_allclose(fw.gradX[:, :, 0, 0], fd, rtol=1e-6, atol=1e-8)


def test_inverse_flow_invariant():
    coeffs = make_preset("random-coeff-sine")
    b = gen_bundle(4, TimeGrid(0.0, 1.0, 400), 500, 1, 1)
    fw = solve_forward(coeffs, [0.0], b)
    res = np.abs(fw.gradX @ fw.gradX_inv - np.eye(1)).max()
    assert res < 1e-8
    assert not fw.singular.any()


def test_inverse_flow_invariant_two_dimensional():
    # a d = 2 system with rotation-coupled noise; no preset covers d > 1
    from bdsfk.coefficients import CoefficientSet

    def b(x):
        return -0.5 * x

    def sigma(x):
        M = x.shape[0]
        s = np.zeros((M, 2, 2))
        s[:, 0, 0] = 1 + 0.1 * np.sin(x[:, 1])
        s[:, 1, 1] = 1 + 0.1 * np.cos(x[:, 0])
        s[:, 0, 1] = 0.2
        return s

    def db(x):
        return np.broadcast_to(-0.5 * np.eye(2), (x.shape[0], 2, 2)).copy()

    def dsigma(x):
        M = x.shape[0]
        out = np.zeros((M, 2, 2, 2))
        out[:, 0, 0, 1] = 0.1 * np.cos(x[:, 1])
        out[:, 1, 1, 0] = -0.1 * np.sin(x[:, 0])
        return out

    zero = lambda *a: None  # noqa: E731
    coeffs = CoefficientSet(d=2, k=1, l=1, b=b, sigma=sigma, fbar=zero, gbar=zero,
                            h=zero, phi=lambda t: np.zeros(1), db=db, dsigma=dsigma)
    bun = gen_bundle(8, TimeGrid(0.0, 1.0, 100), 300, 2, 1)
    fw = solve_forward(coeffs, [0.1, -0.2], bun)
    assert np.abs(fw.gradX @ fw.gradX_inv - np.eye(2)).max() < 1e-8


def test_tangent_flow_needs_derivatives(small_bundle):
    c = scalar_coefficients(np.sin, np.cos, lambda e, x, y, z: 0 * x, lambda e, x, y, z: 0 * x,
                            np.cos)
    fw = euler_forward(c, [0.0], small_bundle)
    with pytest.raises(MissingDerivativeError):
        tangent_flow(c, fw, small_bundle)


def test_explosion_raises_with_location():
    c = scalar_coefficients(lambda x: 1e3 * x ** 3, lambda x: 1.0 + 0 * x,
                            lambda e, x, y, z: 0 * x, lambda e, x, y, z: 0 * x, np.cos)
    b = gen_bundle(1, TimeGrid(0.0, 1.0, 10), 5, 1, 1)
    with pytest.raises(NonFiniteStateError) as exc, np.errstate(over="ignore", invalid="ignore"):
        euler_forward(c, [5.0], b)
    assert exc.value.node >= 1


def test_dimension_mismatch_rejected():
    b = gen_bundle(1, TimeGrid(0.0, 1.0, 4), 3, 2, 1)
    with pytest.raises(ValueError):
        euler_forward(make_preset("heat-quadratic"), [0.0], b)


def test_malliavin_dx_structure(small_bundle):
    kappa, sigma = 0.5, 0.5
    fw = solve_forward(make_preset("ou-linear", kappa=kappa, sigma=sigma), [1.0], small_bundle)
    th = 7
    D = malliavin_DX(fw, th, make_preset("ou-linear", kappa=kappa, sigma=sigma))[:, :, 0, 0]
    assert (D[:, :th] == 0).all()
    assert (D[:, th] == sigma).all()
    dt = small_bundle.grid.dt
    expected = sigma * (1 - kappa * dt) ** np.arange(small_bundle.grid.N + 1 - th)
    np.testing.assert_allclose(D[:, th:], np.broadcast_to(expected, D[:, th:].shape), rtol=1e-12)


def test_malliavin_dx_requires_flow(small_bundle):
    coeffs = make_preset("heat-quadratic")
    fw = euler_forward(coeffs, [0.0], small_bundle)
    with pytest.raises(ValueError):
        malliavin_DX(fw, 0, coeffs)
    fw = solve_forward(coeffs, [0.0], small_bundle)
    with pytest.raises(IndexError):
        malliavin_DX(fw, small_bundle.grid.N + 1, coeffs)
