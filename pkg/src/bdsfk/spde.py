"""Pathwise finite differences for the backward quasilinear SPDE in one space dimension.

Given one realization of the backward driver ``B``, the field is marched from
``u(T, x) = h(x)`` back to ``t0``::

    u[i] = u[i+1] + (L u + fbar(Bb, x, u, sigma u_x)) dt + gbar(Bb_{i+1}, x, u[i+1], sigma u_x[i+1]) dB_i

with ``fbar`` and ``gbar`` evaluated at level ``i+1``. The generator ``L`` is
explicit at ``i+1`` or Crank-Nicolson (``theta = 1/2``). The truncated domain
is closed by linear ghost extrapolation, i.e. ``u_xx = 0`` at the end nodes.
"""
import struct
from dataclasses import dataclass

import numpy as np
from scipy.interpolate import CubicSpline

from .kernels import thomas_solve

__all__ = [
    "SpaceGrid",
    "RandomFieldU",
    "CFLViolation",
    "NonFiniteFieldError",
    "SCHEMES",
    "generator_apply",
    "diff_x",
    "diff_xx",
    "solve_spde",
    "write_field_csv",
    "dump_field",
    "load_field",
]

SCHEMES = ("explicit", "theta_implicit")
_FIELD_MAGIC = b"BDSFKFLD"
# magic, version, N, J, t0, T, x_min, x_max, has_b_seed, b_seed
_FIELD_HEADER = struct.Struct("<8sQqqddddQQ")


class CFLViolation(ValueError):
    def __init__(self, dt, required, n_required):
        super().__init__(f"explicit scheme unstable: dt={dt:.6g} exceeds dx^2/max sigma^2 = "
                         f"{required:.6g}; need N >= {n_required} or scheme='theta_implicit'")
        self.dt = dt
        self.required = required
        self.n_required = n_required


class NonFiniteFieldError(FloatingPointError):
    def __init__(self, node):
        super().__init__(f"non-finite field value at time node {node}")
        self.node = node


@dataclass(frozen=True)
class SpaceGrid:
    """``J`` interior nodes plus two end nodes spanning ``[x_min, x_max]``."""

    x_min: float
    x_max: float
    J: int

    def __post_init__(self):
        if not self.x_min < self.x_max:
            raise ValueError(f"SpaceGrid: x_min={self.x_min} must be < x_max={self.x_max}")
        if int(self.J) != self.J or self.J < 3:
            raise ValueError(f"SpaceGrid: J must be an integer >= 3, got {self.J!r}")

    @property
    def dx(self):
        return (self.x_max - self.x_min) / (self.J + 1)

    @property
    def nodes(self):
        x = self.x_min + self.dx * np.arange(self.J + 2)
        x[-1] = self.x_max
        return x


def diff_x(u, dx):
    """Central difference inside, one-sided at both ends. Works on the last axis."""
    ux = np.empty_like(u)
    ux[..., 1:-1] = (u[..., 2:] - u[..., :-2]) / (2 * dx)
    ux[..., 0] = (u[..., 1] - u[..., 0]) / dx
    ux[..., -1] = (u[..., -1] - u[..., -2]) / dx
    return ux


def diff_xx(u, dx):
    """Second difference inside; zero at the ends (the ghost freeze)."""
    uxx = np.zeros_like(u)
    uxx[..., 1:-1] = (u[..., 2:] - 2 * u[..., 1:-1] + u[..., :-2]) / (dx * dx)
    return uxx


def _sig_b(space, coeffs):
    x = space.nodes[:, None]
    return coeffs.sigma(x)[:, 0, 0], coeffs.b(x)[:, 0]


def generator_apply(u_row, space, coeffs, _sb=None):
    """``0.5 sigma^2 u_xx + b u_x`` on interior nodes (central stencils); zero at the ends."""
    u_row = np.asarray(u_row, dtype=np.float64)
    if u_row.shape != (space.J + 2,):
        raise ValueError(f"row has shape {u_row.shape}, expected ({space.J + 2},)")
    sig, b = _sb if _sb is not None else _sig_b(space, coeffs)
    dx = space.dx
    out = np.zeros_like(u_row)
    out[1:-1] = (0.5 * sig[1:-1] ** 2 * (u_row[2:] - 2 * u_row[1:-1] + u_row[:-2]) / (dx * dx)
                 + b[1:-1] * (u_row[2:] - u_row[:-2]) / (2 * dx))
    return out


def _close(row):
    row[0] = 2 * row[1] - row[2]
    row[-1] = 2 * row[-2] - row[-3]
    return row


def _interior_bands(sig, b, dx):
    """Bands of ``L`` on interior unknowns with the ghost relation substituted."""
    s2 = sig[1:-1] ** 2
    lo = 0.5 * s2 / dx ** 2 - 0.5 * b[1:-1] / dx
    di = -s2 / dx ** 2
    up = 0.5 * s2 / dx ** 2 + 0.5 * b[1:-1] / dx
    di = di.copy()
    di[0] += 2 * lo[0]
    up0 = up[0] - lo[0]
    di[-1] += 2 * up[-1]
    loJ = lo[-1] - up[-1]
    lower = lo[1:].copy()
    upper = up[:-1].copy()
    upper[0] = up0
    lower[-1] = loJ
    return lower, di, upper


class RandomFieldU:
    """Field ``u`` (N+1, J+2) on a time grid and space grid, pathwise in one B."""

    def __init__(self, grid, space, u, b_seed=None, scheme="explicit"):
        self.grid = grid
        self.space = space
        self.u = u
        self.b_seed = b_seed
        self.scheme = scheme

    @property
    def ux(self):
        return diff_x(self.u, self.space.dx)

    @property
    def uxx(self):
        return diff_xx(self.u, self.space.dx)

    def value(self, i, x):
        """Cubic-spline interpolation of row ``i`` at ``x`` (scalar or array)."""
        return CubicSpline(self.space.nodes, self.u[i])(x)

    def derivative(self, i, x):
        return CubicSpline(self.space.nodes, self.u[i])(x, 1)

    def at(self, t, x):
        return self.value(self.grid.index_of(t), x)


def solve_spde(coeffs, bundle, bback, space, scheme="explicit"):
    """March the field backward along the bundle's B increments.

    Only the B part of ``bundle`` is used. Requires ``d = k = 1``.
    """
    if coeffs.d != 1 or coeffs.k != 1:
        raise ValueError(f"the finite-difference side needs d=k=1, got d={coeffs.d}, k={coeffs.k}")
    if bundle.l != coeffs.l:
        raise ValueError(f"bundle has l={bundle.l} but coefficients expect l={coeffs.l}")
    if scheme not in SCHEMES:
        raise ValueError(f"unknown scheme {scheme!r}; expected one of {SCHEMES}")
    g = bundle.grid
    N, dt, dx = g.N, g.dt, space.dx
    if bback.values.shape[0] != N + 1:
        raise ValueError("backward functional does not match the bundle grid")
    x = space.nodes
    X = x[:, None]
    n = x.size
    sig, b = _sig_b(space, coeffs)
    if scheme == "explicit":
        limit = dx * dx / float(np.max(sig ** 2))
        if dt > limit * (1 + 1e-12):
            raise CFLViolation(dt, limit, int(np.ceil((g.T - g.t0) / limit)))
    else:
        lower, di, upper = _interior_bands(sig, b, dx)
        a_lo, a_di, a_up = -0.5 * dt * lower, 1.0 - 0.5 * dt * di, -0.5 * dt * upper
    u = np.empty((N + 1, n))
    u[N] = coeffs.h(X)[:, 0]
    sb = (sig, b)
    for i in range(N - 1, -1, -1):
        nxt = u[i + 1]
        y = nxt[:, None]
        z = (sig * diff_x(nxt, dx))[:, None, None]
        e = np.broadcast_to(bback[i + 1], (n, coeffs.l))
        src = coeffs.fbar(e, X, y, z)[:, 0] * dt
        if not coeffs.g_zero:
            src = src + coeffs.gbar(e, X, y, z)[:, 0, :] @ bundle.dB[i]
        Lu = generator_apply(nxt, space, coeffs, sb)
        row = np.empty(n)
        if scheme == "explicit":
            row[1:-1] = nxt[1:-1] + Lu[1:-1] * dt + src[1:-1]
        else:
            rhs = nxt[1:-1] + 0.5 * dt * Lu[1:-1] + src[1:-1]
            row[1:-1] = thomas_solve(a_lo, a_di, a_up, rhs)
        u[i] = _close(row)
        if not np.isfinite(u[i]).all():
            raise NonFiniteFieldError(i)
    return RandomFieldU(g, space, u, b_seed=bundle.b_seed, scheme=scheme)


def write_field_csv(field, path):
    """Long-format table with columns ``t, x, u, ux``."""
    t = np.repeat(field.grid.nodes, field.space.J + 2)
    x = np.tile(field.space.nodes, field.grid.N + 1)
    data = np.column_stack([t, x, field.u.ravel(), field.ux.ravel()])
    np.savetxt(path, data, delimiter=",", header="t,x,u,ux", comments="", fmt="%.17g")


def dump_field(field, path):
    """Header then row-major little-endian float64 ``u``; derivatives are recomputed on load."""
    g, s = field.grid, field.space
    has_b = field.b_seed is not None
    b_seed = int(field.b_seed) if has_b else 0
    with open(path, "wb") as fh:
        fh.write(_FIELD_HEADER.pack(_FIELD_MAGIC, 1, g.N, s.J, g.t0, g.T, s.x_min, s.x_max,
                                    int(has_b), b_seed))
        fh.write(np.ascontiguousarray(field.u, dtype="<f8").tobytes())


def load_field(path):
    from .paths import TimeGrid

    with open(path, "rb") as fh:
        head = fh.read(_FIELD_HEADER.size)
        if len(head) != _FIELD_HEADER.size:
            raise ValueError(f"{path}: truncated field header")
        magic, version, N, J, t0, T, x_min, x_max, has_b, b_seed = _FIELD_HEADER.unpack(head)
        if magic != _FIELD_MAGIC:
            raise ValueError(f"{path}: not a field dump (bad magic {magic!r})")
        if version != 1:
            raise ValueError(f"{path}: unsupported field dump version {version}")
        body = fh.read()
    count = (N + 1) * (J + 2)
    if len(body) != 8 * count:
        raise ValueError(f"{path}: expected {count} values, found {len(body) // 8}")
    u = np.frombuffer(body, dtype="<f8").reshape(N + 1, J + 2).astype(np.float64)
    return RandomFieldU(TimeGrid(t0, T, N), SpaceGrid(x_min, x_max, J), u,
                        b_seed=b_seed if has_b else None)
