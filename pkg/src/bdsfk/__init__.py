"""Stochastic Feynman-Kac lab: BDSDE Monte Carlo, pathwise SPDE finite differences, and their cross-checks."""
from .bdsde import (BDSDESolution, SchemeOptions, check_assumptions, moment_diagnostics,
                    picard_solve, solve_bdsde)
from .coefficients import CoefficientSet, MissingDerivativeError, scalar_coefficients
from .forward import ForwardSolution, malliavin_DX, solve_forward
from .harness import convergence_study, fk_compare
from .kernels import BACKEND
from .malliavin import (identity_checks, solve_malliavin_D, solve_variational)
from .paths import (BrownianBundle, TimeGrid, backward_B, dump_paths, gen_bundle, load_paths,
                    refine_bundle)
from .presets import PRESETS, make_preset
from .regression import RegressionSpec
from .scenario import Scenario, load_scenario
from .spde import RandomFieldU, SpaceGrid, generator_apply, solve_spde

__version__ = "0.1.0"

__all__ = [
    "BACKEND", "BDSDESolution", "BrownianBundle", "CoefficientSet", "ForwardSolution",
    "MissingDerivativeError", "PRESETS", "RandomFieldU", "RegressionSpec", "Scenario",
    "SchemeOptions", "SpaceGrid", "TimeGrid", "backward_B", "check_assumptions",
    "convergence_study", "dump_paths", "fk_compare", "gen_bundle", "generator_apply",
    "identity_checks", "load_paths", "load_scenario", "make_preset", "malliavin_DX",
    "moment_diagnostics", "picard_solve", "refine_bundle", "scalar_coefficients",
    "solve_bdsde", "solve_forward", "solve_malliavin_D", "solve_spde", "solve_variational",
]
