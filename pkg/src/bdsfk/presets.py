"""Named coefficient families with analytic derivatives (all ``d = k = l = 1``).

Each preset declares the constants it satisfies and the parameter ranges in
which those declarations hold; :func:`make_preset` rejects parameters outside
them.
"""
import numpy as np

from .coefficients import scalar_coefficients

__all__ = ["PRESETS", "make_preset", "preset_defaults", "exact_solution"]


def _zero4(e, x, y, z):
    return np.zeros_like(x)


def _zero1(x):
    return np.zeros_like(x)


def _const4(v):
    return lambda e, x, y, z: np.full_like(x, v)


def _const1(v):
    return lambda x: np.full_like(x, v)


def heat_quadratic(sigma=1.0):
    return scalar_coefficients(
        _zero1, _const1(sigma), _zero4, _zero4, lambda x: x ** 2,
        db=_zero1, dsigma=_zero1, dh=lambda x: 2 * x,
        fbar_x=_zero4, fbar_y=_zero4, fbar_z=_zero4,
        gbar_x=_zero4, gbar_y=_zero4, gbar_z=_zero4,
        c=1.0, alpha=0.5, C=1.0, g_zero=True, name="heat-quadratic")


def ou_linear(kappa=0.5, sigma=0.5, rate=0.2):
    return scalar_coefficients(
        lambda x: -kappa * x, _const1(sigma), lambda e, x, y, z: -rate * y, _zero4, lambda x: x,
        db=_const1(-kappa), dsigma=_zero1, dh=_const1(1.0),
        fbar_x=_zero4, fbar_y=_const4(-rate), fbar_z=_zero4,
        gbar_x=_zero4, gbar_y=_zero4, gbar_z=_zero4,
        c=max(rate ** 2, 1e-3) * 1.01, alpha=0.5, C=1.0, g_zero=True, name="ou-linear")


def additive_noise(gamma=0.5):
    return scalar_coefficients(
        _zero1, _const1(1.0), _zero4, _const4(gamma), lambda x: x ** 2,
        db=_zero1, dsigma=_zero1, dh=lambda x: 2 * x,
        fbar_x=_zero4, fbar_y=_zero4, fbar_z=_zero4,
        gbar_x=_zero4, gbar_y=_zero4, gbar_z=_zero4,
        c=1.0, alpha=0.5, C=1.0, g_zero=(gamma == 0),
        name="additive-noise")


def nonlinear_f_exp_decay():
    return scalar_coefficients(
        _zero1, _const1(1.0), lambda e, x, y, z: -y, _zero4, _const1(1.0),
        db=_zero1, dsigma=_zero1, dh=_zero1,
        fbar_x=_zero4, fbar_y=_const4(-1.0), fbar_z=_zero4,
        gbar_x=_zero4, gbar_y=_zero4, gbar_z=_zero4,
        c=1.0, alpha=0.5, C=1.0, g_zero=True, name="nonlinear-f-exp-decay")


def contracting_g(a=0.5):
    return scalar_coefficients(
        _zero1, _const1(1.0), _zero4, lambda e, x, y, z: a * z, np.sin,
        db=_zero1, dsigma=_zero1, dh=np.cos,
        fbar_x=_zero4, fbar_y=_zero4, fbar_z=_zero4,
        gbar_x=_zero4, gbar_y=_zero4, gbar_z=_const4(a),
        c=1.0, alpha=min(0.99, max(a * a * 1.01, 1e-3)), C=1.0, name="contracting-g")


def random_coeff_sine(amp=0.5, fx=0.5, fy=0.5, fz=0.2, gx=0.3, gy=0.2, gz=0.1):
    """Forward: ``b = -0.3 sin x``, ``sigma = 1 + 0.2 cos x``; terminal ``cos x``.

    ``fbar = fx sin(e + x) - fy y + fz sin z`` and
    ``gbar = gx sin(e + x) + gy sin y + gz sin z`` with ``phi = amp``.
    """
    c = max(fy ** 2 + fz ** 2, 2 * gy ** 2) * 1.05 + 1e-12
    return scalar_coefficients(
        lambda x: -0.3 * np.sin(x), lambda x: 1.0 + 0.2 * np.cos(x),
        lambda e, x, y, z: fx * np.sin(e + x) - fy * y + fz * np.sin(z),
        lambda e, x, y, z: gx * np.sin(e + x) + gy * np.sin(y) + gz * np.sin(z),
        np.cos, phi=amp,
        db=lambda x: -0.3 * np.cos(x), dsigma=lambda x: -0.2 * np.sin(x), dh=lambda x: -np.sin(x),
        fbar_x=lambda e, x, y, z: fx * np.cos(e + x), fbar_y=_const4(-fy),
        fbar_z=lambda e, x, y, z: fz * np.cos(z),
        gbar_x=lambda e, x, y, z: gx * np.cos(e + x),
        gbar_y=lambda e, x, y, z: gy * np.cos(y),
        gbar_z=lambda e, x, y, z: gz * np.cos(z),
        c=c, alpha=min(0.99, 2 * gz ** 2 * 1.05 + 1e-12), C=4.0, name="random-coeff-sine")


# parameter ranges within which the declared constants hold
_RANGES = {
    "heat-quadratic": {"sigma": (0.1, 3.0)},
    "ou-linear": {"kappa": (-2.0, 2.0), "sigma": (0.0, 3.0), "rate": (-2.0, 2.0)},
    "additive-noise": {"gamma": (-5.0, 5.0)},
    "nonlinear-f-exp-decay": {},
    "contracting-g": {"a": (-0.99, 0.99)},
    "random-coeff-sine": {"amp": (0.0, 2.0), "fx": (0.0, 1.0), "fy": (0.0, 1.0),
                          "fz": (0.0, 0.5), "gx": (0.0, 0.5), "gy": (0.0, 0.3),
                          "gz": (0.0, 0.3)},
}

PRESETS = {
    "heat-quadratic": heat_quadratic,
    "ou-linear": ou_linear,
    "additive-noise": additive_noise,
    "nonlinear-f-exp-decay": nonlinear_f_exp_decay,
    "contracting-g": contracting_g,
    "random-coeff-sine": random_coeff_sine,
}

# numerical defaults per preset; c_fd is the finite-resolution budget constant
# frozen from scripts/calibrate_cfd.py (log in scripts/calibrate_cfd.log)
_DEFAULTS = {
    "heat-quadratic": {"x_min": -6.0, "x_max": 6.0, "c_fd": 3e-6},
    "ou-linear": {"x_min": -6.0, "x_max": 6.0, "c_fd": 0.06},
    "additive-noise": {"x_min": -6.0, "x_max": 6.0, "c_fd": 3e-6},
    "nonlinear-f-exp-decay": {"x_min": -6.0, "x_max": 6.0, "c_fd": 0.3},
    "contracting-g": {"x_min": -6.0, "x_max": 6.0, "c_fd": 3.0},
    "random-coeff-sine": {"x_min": -6.0, "x_max": 6.0, "c_fd": 3.0},
}


def make_preset(name, **params):
    if name not in PRESETS:
        raise KeyError(f"unknown preset {name!r}; known: {', '.join(sorted(PRESETS))}")
    ranges = _RANGES[name]
    for key, value in params.items():
        if key not in ranges:
            raise ValueError(f"preset {name!r} has no parameter {key!r}")
        lo, hi = ranges[key]
        if not lo <= value <= hi:
            raise ValueError(f"preset {name!r}: {key}={value} outside declared range [{lo}, {hi}]")
    return PRESETS[name](**params)


def preset_defaults(name):
    return dict(_DEFAULTS[name])


def exact_solution(name, **params):
    """Closed-form ``u(t, x)`` (terminal time ``T``) where one exists, else ``None``."""
    if name == "heat-quadratic":
        s = params.get("sigma", 1.0)
        return lambda t, x, T: x ** 2 + s * s * (T - t)
    if name == "ou-linear":
        kappa = params.get("kappa", 0.5)
        rate = params.get("rate", 0.2)
        return lambda t, x, T: x * np.exp(-(kappa + rate) * (T - t))
    if name == "nonlinear-f-exp-decay":
        return lambda t, x, T: np.exp(-(T - t)) + 0.0 * x
    return None
