import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bdsfk.coefficients import scalar_coefficients
from bdsfk.harness import empirical_order
from bdsfk.paths import TimeGrid, backward_B, gen_bundle
from bdsfk.presets import exact_solution, make_preset
from bdsfk.spde import (CFLViolation, NonFiniteFieldError, SpaceGrid, diff_x, diff_xx,
                        dump_field, generator_apply, load_field, solve_spde, write_field_csv)


def _zero(e, x, y, z):
    return 0 * x


def _heat_with(h, f=_zero, sigma=1.0):
    return scalar_coefficients(lambda x: 0 * x, lambda x: sigma + 0 * x, f, _zero, h, g_zero=True)


def _solve(coeffs, N, space, scheme="explicit", b_seed=1):
    b = gen_bundle(1, TimeGrid(0.0, 1.0, N), 1, 1, coeffs.l, b_seed=b_seed)
    return solve_spde(coeffs, b, backward_B(coeffs.phi, b), space, scheme), b


def test_space_grid_validation():
    s = SpaceGrid(-1.0, 1.0, 3)
    assert s.dx == 0.5 and s.nodes.size == 5
    for args in ((1.0, -1.0, 5), (0.0, 1.0, 2)):
        with pytest.raises(ValueError):
            SpaceGrid(*args)


@given(a=st.floats(-3, 3), bcoef=st.floats(-3, 3), c0=st.floats(-3, 3))
@settings(max_examples=30, deadline=None)
def test_generator_exact_on_quadratics(a, bcoef, c0):
    coeffs = make_preset("ou-linear", kappa=0.5, sigma=0.7)
    space = SpaceGrid(-2.0, 2.0, 15)
    x = space.nodes
    Lu = generator_apply(a * x ** 2 + bcoef * x + c0, space, coeffs)
    # L u = 0.5 sigma^2 u'' + b u' with b = -0.5 x
    expected = 0.5 * 0.49 * 2 * a + (-0.5 * x) * (2 * a * x + bcoef)
    np.testing.assert_allclose(Lu[1:-1], expected[1:-1], atol=1e-10)
    assert Lu[0] == 0.0 and Lu[-1] == 0.0


def test_stencils():
    space = SpaceGrid(0.0, 1.0, 9)
    u = space.nodes ** 2
    np.testing.assert_allclose(diff_x(u, space.dx)[1:-1], 2 * space.nodes[1:-1], atol=1e-12)
    np.testing.assert_allclose(diff_xx(u, space.dx)[1:-1], 2.0, atol=1e-10)
    with pytest.raises(ValueError):
        generator_apply(u[:-1], space, make_preset("heat-quadratic"))


@pytest.mark.parametrize("scheme", ["explicit", "theta_implicit"])
def test_heat_quadratic_matches_closed_form(scheme):
    space = SpaceGrid(-6.0, 6.0, 200)
    field, b = _solve(make_preset("heat-quadratic"), 400, space, scheme)
    exact = exact_solution("heat-quadratic")
    mid = np.abs(space.nodes) <= 2
    for i in (0, 200):
        t = b.grid.nodes[i]
        err = np.abs(field.u[i, mid] - exact(t, space.nodes[mid], 1.0)).max()
        assert err < 1e-4
    # the spline read-out is exact for quadratic rows
    assert abs(field.value(0, 0.123) - exact(0.0, 0.123, 1.0)) < 1e-4


def test_constant_terminal_data_is_preserved():
    c = _heat_with(lambda x: 3.0 + 0 * x)
    field, _ = _solve(c, 100, SpaceGrid(-6.0, 6.0, 100))
    assert np.abs(field.u - 3.0).max() < 1e-13


@pytest.mark.parametrize("scheme", ["explicit", "theta_implicit"])
def test_additive_noise_is_superposed_exactly(scheme):
    space = SpaceGrid(-6.0, 6.0, 100)
    u0, b = _solve(make_preset("additive-noise", gamma=0.0), 200, space, scheme, b_seed=9)
    u1, _ = _solve(make_preset("additive-noise", gamma=0.5), 200, space, scheme, b_seed=9)
    B = b.B[:, 0]
    shift = 0.5 * (B[-1] - B)
    np.testing.assert_allclose(u1.u - u0.u, np.broadcast_to(shift[:, None], u0.u.shape), atol=1e-12)


def test_cfl_violation_names_required_steps():
    space = SpaceGrid(-6.0, 6.0, 200)
    with pytest.raises(CFLViolation) as exc:
        _solve(make_preset("heat-quadratic"), 100, space)
    n = exc.value.n_required
    assert str(n) in str(exc.value)
    _solve(make_preset("heat-quadratic"), n, space)  # the suggested N is stable


def test_comparison_principle():
    space = SpaceGrid(-6.0, 6.0, 80)

    def lin(e, x, y, z):
        return -0.3 * y

    lo, _ = _solve(_heat_with(np.cos, lin), 100, space)
    hi, _ = _solve(_heat_with(lambda x: np.cos(x) + 0.1 * np.exp(-x * x), lin), 100, space)
    # interior unknowns; the end nodes are linear extrapolations (not a monotone map)
    assert (hi.u[:, 1:-1] >= lo.u[:, 1:-1] - 1e-14).all()
    assert (hi.u[0] - lo.u[0]).max() > 0


@pytest.mark.parametrize("scheme", ["explicit", "theta_implicit"])
def test_first_order_convergence_on_cosine_data(scheme):
    c = _heat_with(np.cos)
    dts, errs = [], []
    for N, J in ((50, 83), (100, 119), (200, 168)):
        space = SpaceGrid(-6.0, 6.0, J)
        field, _ = _solve(c, N, space, scheme)
        mid = np.abs(space.nodes) <= 2
        errs.append(np.abs(field.u[0, mid] - np.exp(-0.5) * np.cos(space.nodes[mid])).max())
        dts.append(1.0 / N)
    assert empirical_order(dts, errs) >= 0.9


def test_spde_rejects_bad_inputs():
    b = gen_bundle(1, TimeGrid(0.0, 1.0, 10), 1, 1, 1)
    c = make_preset("heat-quadratic")
    with pytest.raises(ValueError):
        solve_spde(c, b, backward_B(c.phi, b), SpaceGrid(-1, 1, 5), "implicit")
    other = gen_bundle(1, TimeGrid(0.0, 1.0, 20), 1, 1, 1)
    with pytest.raises(ValueError):
        solve_spde(c, b, backward_B(c.phi, other), SpaceGrid(-1, 1, 5))


def test_non_finite_field_reports_node():
    c = _heat_with(lambda x: 1e200 + 0 * x, f=lambda e, x, y, z: y * y)
    with pytest.raises(NonFiniteFieldError) as exc, np.errstate(over="ignore", invalid="ignore"):
        _solve(c, 10, SpaceGrid(-1.0, 1.0, 5))
    assert exc.value.node == 9


def test_field_dump_round_trip(tmp_path):
    c = make_preset("random-coeff-sine")
    field, _ = _solve(c, 40, SpaceGrid(-3.0, 3.0, 20), "theta_implicit", b_seed=2 ** 64 - 1)
    p = tmp_path / "field.bin"
    dump_field(field, p)
    back = load_field(p)
    assert back.u.tobytes() == field.u.tobytes()
    assert back.ux.tobytes() == field.ux.tobytes()
    assert back.b_seed == 2 ** 64 - 1
    raw = p.read_bytes()
    (tmp_path / "bad.bin").write_bytes(b"NOTFIELD" + raw[8:])
    (tmp_path / "short.bin").write_bytes(raw[:-8])
    for name in ("bad.bin", "short.bin"):
        with pytest.raises(ValueError):
            load_field(tmp_path / name)


def test_field_csv_layout(tmp_path):
    field, _ = _solve(make_preset("heat-quadratic"), 10, SpaceGrid(-1.0, 1.0, 4))
    p = tmp_path / "f.csv"
    write_field_csv(field, p)
    lines = p.read_text().splitlines()
    assert lines[0] == "t,x,u,ux"
    assert len(lines) == 1 + 11 * 6
    t, x, u, _ = map(float, lines[1].split(","))
    assert (t, x) == (0.0, -1.0) and u == field.u[0, 0]
