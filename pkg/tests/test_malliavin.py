import numpy as np
import pytest

from bdsfk.malliavin import (fd_gradient_check, identity_checks, malliavin_norm,
                             solve_malliavin_D, solve_variational, theta_subgrid)
from bdsfk.paths import TimeGrid, gen_bundle
from bdsfk.regression import RegressionSpec
from conftest import solve_chain


@pytest.fixture(scope="module")
def ou_layers():
    b = gen_bundle(3, TimeGrid(0.0, 1.0, 20), 4000, 1, 1)
    reg = RegressionSpec(degree=2)
    coeffs, fw, bb, base = solve_chain("ou-linear", 1.0, b, reg=reg, flow=True)
    var = solve_variational(coeffs, fw, b, bb, base, reg)
    for th in (0, 5, 13, 20):
        solve_malliavin_D(coeffs, fw, b, bb, base, th, reg, out=var)
    return b, coeffs, fw, base, var


def test_ou_gradient_matches_closed_form(ou_layers):
    b, _, _, _, var = ou_layers
    # u(t, x) = x exp(-(kappa + rate)(T - t)); grad Y_0 is its x-derivative up to O(dt)
    assert abs(var.gradY[:, 0].mean() - np.exp(-0.7)) < 0.01


def test_malliavin_zero_before_theta(ou_layers):
    _, _, _, _, var = ou_layers
    for th, DY in var.DY.items():
        assert (DY[:, :th] == 0).all()
        assert (var.DZ[th][:, :th] == 0).all()


def test_identities_hold_on_linear_preset(ou_layers):
    _, coeffs, fw, base, var = ou_layers
    rep = identity_checks(var, fw, base, coeffs)
    assert max(rep["dy_product"].values()) < 1e-6
    assert max(rep["dy_diag"].values()) < 2e-2
    assert rep["paths_used"] == fw.M


def test_start_gradient_identity_on_linear_preset():
    b = gen_bundle(3, TimeGrid(0.0, 1.0, 100), 40000, 1, 1)
    reg = RegressionSpec(degree=2)
    coeffs, fw, bb, base = solve_chain("ou-linear", 1.0, b, reg=reg, flow=True)
    var = solve_variational(coeffs, fw, b, bb, base, reg)
    rep = identity_checks(var, fw, base, coeffs)
    # closed form: Z_0 = u_x(0, x) sigma = 0.5 exp(-0.7)
    assert abs(rep["grad_y0_sigma"][0][0] - 0.5 * np.exp(-0.7)) < 1e-3
    assert rep["z0_grad"] < 1e-2
    assert rep["z_grad"] < 2e-2
    assert 1e-4 < base.se_z0[0, 0] < 1e-2


def test_theta_at_terminal_node(ou_layers):
    b, coeffs, fw, base, var = ou_layers
    N = b.grid.N
    DY = var.DY[N]
    np.testing.assert_allclose(DY[:, N, 0, 0], 0.5 * np.ones(fw.M))  # h' sigma
    assert (DY[:, :N] == 0).all()


def test_malliavin_norm_quadrature(ou_layers):
    b, _, _, base, var = ou_layers
    assert malliavin_norm(base, var, node=0) == pytest.approx(np.mean(base.Y[:, 0, 0] ** 2))
    # D_theta Y_s is deterministic: u_x(s) sigma exp(-kappa (s - theta)) up to O(dt);
    # the same trapezoid nodes (0, 5, 13) are applied to the closed form
    s = 13
    total = malliavin_norm(base, var, node=s)
    ey2 = np.mean(base.Y[:, s, 0] ** 2)
    nodes = b.grid.nodes
    th = nodes[[0, 5, 13]]
    vals = (0.5 * np.exp(-0.7 * (1 - nodes[s])) * np.exp(-0.5 * (nodes[s] - th))) ** 2
    approx = ey2 + np.sum(0.5 * (vals[1:] + vals[:-1]) * np.diff(th))
    assert abs(total - approx) < 0.02 * approx
    with pytest.raises(ValueError):
        malliavin_norm(base, var, node=7)


def test_theta_subgrid():
    assert theta_subgrid(10, 3) == [0, 5, 10]
    assert theta_subgrid(2, 8) == [0, 1, 2]


def test_gradient_agrees_with_difference_quotient():
    b = gen_bundle(4, TimeGrid(0.0, 1.0, 20), 20000, 1, 1)
    from bdsfk.paths import backward_B
    from bdsfk.presets import make_preset

    c = make_preset("random-coeff-sine")
    rep = fd_gradient_check(c, b, backward_B(c.phi, b), [0.3], 1e-4, central=True)
    assert rep["abs_error"].max() < 0.02
    with pytest.raises(ValueError):
        fd_gradient_check(c, b, backward_B(c.phi, b), [0.3], 0.0)


def test_variational_requires_flow():
    b = gen_bundle(4, TimeGrid(0.0, 1.0, 10), 100, 1, 1)
    coeffs, fw, bb, base = solve_chain("ou-linear", 1.0, b, flow=False)
    with pytest.raises(ValueError):
        solve_variational(coeffs, fw, b, bb, base)
