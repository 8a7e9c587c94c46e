"""Problem data: forward coefficients, BDSDE drivers, terminal map and weight.

Every callable is vectorized over a leading path axis of length ``M``:

==========  =====================  ============================
name        arguments              result shape
==========  =====================  ============================
b           x (M, d)               (M, d)
sigma       x (M, d)               (M, d, d)
fbar        e, x, y, z             (M, k)
gbar        e, x, y, z             (M, k, l)
h           x (M, d)               (M, k)
phi         t (float)              (l,)
==========  =====================  ============================

with ``e`` (M, l), ``y`` (M, k), ``z`` (M, k, d). Derivative oracles carry the
differentiated argument's axes last: ``db`` (M, d, d), ``dsigma`` (M, d, d, d),
``dh`` (M, k, d), ``fbar_x`` (M, k, d), ``fbar_y`` (M, k, k), ``fbar_z``
(M, k, k, d), ``gbar_x`` (M, k, l, d), ``gbar_y`` (M, k, l, k), ``gbar_z``
(M, k, l, k, d).
"""
from dataclasses import dataclass, field, replace

import numpy as np

__all__ = ["CoefficientSet", "scalar_coefficients", "MissingDerivativeError"]

_DERIVATIVES = ("db", "dsigma", "dh", "fbar_x", "fbar_y", "fbar_z",
                "gbar_x", "gbar_y", "gbar_z")


class MissingDerivativeError(ValueError):
    """Raised when a solver needs an analytic derivative that was not supplied."""


@dataclass(frozen=True)
class CoefficientSet:
    d: int
    k: int
    l: int  # noqa: E741
    b: object
    sigma: object
    fbar: object
    gbar: object
    h: object
    phi: object
    c: float = 1.0
    alpha: float = 0.0
    C: float = 1.0
    db: object = None
    dsigma: object = None
    dh: object = None
    fbar_x: object = None
    fbar_y: object = None
    fbar_z: object = None
    gbar_x: object = None
    gbar_y: object = None
    gbar_z: object = None
    # True when gbar is identically zero (lets solvers skip B entirely)
    g_zero: bool = False
    # True when phi is identically zero
    phi_zero: bool = False
    name: str = field(default="custom", compare=False)

    def __post_init__(self):
        for dim in ("d", "k", "l"):
            v = getattr(self, dim)
            if int(v) != v or v < 1:
                raise ValueError(f"CoefficientSet: {dim} must be an integer >= 1, got {v!r}")

    def missing_derivatives(self):
        return [n for n in _DERIVATIVES if getattr(self, n) is None]

    def require_derivatives(self):
        missing = self.missing_derivatives()
        if missing:
            raise MissingDerivativeError(
                f"coefficient set {self.name!r} lacks analytic derivatives: {', '.join(missing)}")

    def with_(self, **changes):
        return replace(self, **changes)


def _col(a, M):
    a = np.asarray(a, dtype=np.float64)
    return np.broadcast_to(a, (M,)) if a.ndim == 0 else a


def scalar_coefficients(b, sigma, fbar, gbar, h, phi=0.0, *, db=None, dsigma=None, dh=None,
                        fbar_x=None, fbar_y=None, fbar_z=None, gbar_x=None, gbar_y=None,
                        gbar_z=None, c=1.0, alpha=0.0, C=1.0, g_zero=False, phi_zero=None,
                        name="custom"):
    """Build a ``d = k = l = 1`` coefficient set from scalar numpy functions.

    Each function takes and returns 1-D arrays (or scalars, broadcast over
    paths): ``b(x)``, ``sigma(x)``, ``h(x)``, ``fbar(e, x, y, z)``,
    ``gbar(e, x, y, z)``. ``phi`` is a constant or a function of ``t``.
    Derivative functions follow the same scalar convention.
    """
    phi_fn = phi if callable(phi) else (lambda t, _p=float(phi): np.array([_p]))
    if phi_zero is None:
        phi_zero = not callable(phi) and float(phi) == 0.0

    def one(fn):
        def wrapped(x):
            M = x.shape[0]
            return _col(fn(x[:, 0]), M)
        return wrapped

    def drv4(fn):
        def wrapped(e, x, y, z):
            M = x.shape[0]
            return _col(fn(e[:, 0], x[:, 0], y[:, 0], z[:, 0, 0]), M)
        return wrapped

    def shaped(fn, shape, wrap):
        if fn is None:
            return None
        inner = wrap(fn)

        def out(*args):
            v = inner(*args)
            return np.ascontiguousarray(v).reshape((v.shape[0],) + shape)
        return out

    return CoefficientSet(
        d=1, k=1, l=1,
        b=shaped(b, (1,), one),
        sigma=shaped(sigma, (1, 1), one),
        fbar=shaped(fbar, (1,), drv4),
        gbar=shaped(gbar, (1, 1), drv4),
        h=shaped(h, (1,), one),
        phi=lambda t: np.atleast_1d(np.asarray(phi_fn(t), dtype=np.float64)),
        db=shaped(db, (1, 1), one),
        dsigma=shaped(dsigma, (1, 1, 1), one),
        dh=shaped(dh, (1, 1), one),
        fbar_x=shaped(fbar_x, (1, 1), drv4),
        fbar_y=shaped(fbar_y, (1, 1), drv4),
        fbar_z=shaped(fbar_z, (1, 1, 1), drv4),
        gbar_x=shaped(gbar_x, (1, 1, 1), drv4),
        gbar_y=shaped(gbar_y, (1, 1, 1), drv4),
        gbar_z=shaped(gbar_z, (1, 1, 1, 1), drv4),
        c=c, alpha=alpha, C=C, g_zero=g_zero, phi_zero=phi_zero, name=name,
    )
