import numpy as np
import pytest

from bdsfk.paths import TimeGrid, backward_B, gen_bundle
from bdsfk.presets import make_preset


@pytest.fixture
def small_grid():
    return TimeGrid(0.0, 1.0, 20)


@pytest.fixture
def small_bundle(small_grid):
    return gen_bundle(11, small_grid, 2000, 1, 1, b_seed=5)


def solve_chain(name, x, bundle, reg=None, flow=False, options=None, **params):
    """Forward paths plus BDSDE solve for a preset; returns (coeffs, forward, bback, sol)."""
    from bdsfk.bdsde import SchemeOptions, solve_bdsde
    from bdsfk.forward import solve_forward
    from bdsfk.regression import RegressionSpec

    coeffs = make_preset(name, **params)
    fw = solve_forward(coeffs, [x], bundle, flow=flow)
    bb = backward_B(coeffs.phi, bundle)
    sol = solve_bdsde(coeffs, fw, bundle, bb, reg or RegressionSpec(), options or SchemeOptions())
    return coeffs, fw, bb, sol


def rms(a):
    return float(np.sqrt(np.mean(np.asarray(a) ** 2)))
