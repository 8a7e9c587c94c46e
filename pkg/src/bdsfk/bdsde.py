"""Least-squares Monte Carlo for BDSDEs conditioned on one backward path.

The backward sweep at node ``i`` forms the payoff
``P = Y_{i+1} + gbar(theta_{i+1}) dB_i`` (right endpoint), projects it on a
basis of ``X_i`` for the conditional expectation, estimates
``Z_i = E[(P - E[P | X_i]) dW_i^T | X_i] / dt`` and sets
``Y_i = E[P | X_i] + fbar(Bb_i, X_i, Y_i, Z_i) dt`` with a few fixed-point
passes in ``Y_i``. The same sweep drives the linearized layers in
:mod:`bdsfk.malliavin`.
"""
import warnings
from dataclasses import dataclass, field

import numpy as np

from .regression import NodeRegressor, RegressionSpec, RegressionWarning

__all__ = [
    "BDSDESolution",
    "NonFiniteSolutionError",
    "SchemeOptions",
    "backward_sweep",
    "solve_bdsde",
    "picard_solve",
    "check_assumptions",
    "moment_diagnostics",
]


class NonFiniteSolutionError(FloatingPointError):
    def __init__(self, node, what="Y"):
        super().__init__(f"non-finite {what} at node {node}")
        self.node = node


@dataclass(frozen=True)
class SchemeOptions:
    """Backward-step settings.

    ``z_method="joint"`` regresses the payoff deviation ``P - E[P|X_i]`` on
    ``phi(X_i) dW_i / sqrt(dt)``; ``"weighted"`` regresses ``dev dW_i / dt``
    on ``phi(X_i)`` (with ``z_control_variate=False`` the raw payoff is used).
    """

    picard_inner: int = 2
    z_control_variate: bool = True
    z_include_g: bool = True
    z_method: str = "joint"

    def __post_init__(self):
        if self.z_method not in ("joint", "weighted"):
            raise ValueError(f"SchemeOptions: unknown z_method {self.z_method!r}")
        if self.picard_inner < 1:
            raise ValueError(f"SchemeOptions: picard_inner must be >= 1, got {self.picard_inner}")


@dataclass
class NodeFit:
    regressor: object
    coef_y: object
    coef_z: object


@dataclass
class SweepResult:
    Y: np.ndarray
    Z: np.ndarray
    fits: list
    pathwise: np.ndarray
    residual_rms: np.ndarray
    warnings: list = field(default_factory=list)
    z_se_first: np.ndarray = None


def _z_target(dev, dW, dt):
    # dev (M, k, ...) -> (M, k, d, ...)
    M, d = dW.shape
    extra = dev.ndim - 2
    return np.expand_dims(dev, 2) * dW.reshape((M, 1, d) + (1,) * extra) / dt


def _joint(reg, dev, w, scale, notes, i):
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", RegressionWarning)
        out = reg.project_increment(dev, w, scale)
    notes.extend(f"node {i} (z): {c.message}" for c in caught)
    return out


def backward_sweep(grid, dW, terminal_y, terminal_z, make_regressor, drift, noise,
                   options=SchemeOptions(), stop=0, check_finite=True):
    """Generic semi-implicit backward sweep.

    ``make_regressor(i)`` returns an object with ``project(target)`` and
    ``fit/predict``; ``drift(i, y, z)`` gives the driver at node ``i``;
    ``noise(i, y_next, z_next)`` gives ``gbar(theta_{i+1}) dB_i``. Nodes below
    ``stop`` are left at zero.
    """
    N = grid.N
    dt = grid.dt
    M = terminal_y.shape[0]
    Y = np.zeros((M, N + 1) + terminal_y.shape[1:])
    Z = np.zeros((M, N) + terminal_z.shape[1:])
    Y[:, N] = terminal_y
    fits = [None] * (N + 1)
    resid = np.zeros(N + 1)
    pathwise = terminal_y.copy()
    notes = []
    z_se = None
    z_next = terminal_z
    for i in range(N - 1, stop - 1, -1):
        y_next = Y[:, i + 1]
        gdb = noise(i, y_next, z_next)
        full = y_next + gdb
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always", RegressionWarning)
            reg = make_regressor(i)
        notes.extend(f"node {i}: {w.message}" for w in caught)
        cond, cy = reg.project(full)
        if options.z_include_g:
            zpay, zcond = full, cond
        else:
            zpay = y_next
            zcond = reg.project(y_next)[0] if options.z_control_variate else None
        dev = zpay - zcond if options.z_control_variate else zpay
        if options.z_method == "joint":
            sq = np.sqrt(dt)
            zi, (cz, _) = _joint(reg, dev, dW[:, i] / sq, sq, notes, i)
        else:
            zi, cz = reg.project(_z_target(dev, dW[:, i], dt))
        if i == stop and M > 1:
            # the joint fit's residual misses the noise of the regressed Y field feeding dev,
            # so both estimators report the spread of the classical target
            z_se = _z_target(dev, dW[:, i], dt).std(axis=0, ddof=1) / np.sqrt(M)
        y = cond
        for _p in range(options.picard_inner):
            y = cond + drift(i, y, zi) * dt
        if check_finite and not (np.isfinite(y).all() and np.isfinite(zi).all()):
            raise NonFiniteSolutionError(i)
        Y[:, i] = y
        Z[:, i] = zi
        fits[i] = NodeFit(reg, cy, cz)
        pathwise = pathwise + (full - y_next) + (y - cond)
        resid[i] = np.sqrt(np.mean((full - cond) ** 2))
        z_next = zi
    return SweepResult(Y, Z, fits, pathwise, resid, notes, z_se)


class BDSDESolution:
    """Per-path ``Y`` (M, N+1, k) and ``Z`` (M, N, k, d) with per-node fitted fields."""

    def __init__(self, grid, coeffs, bback, forward, sweep, options, Z_terminal, diagnostics):
        self.grid = grid
        self.coeffs = coeffs
        self.bback = bback
        self.forward = forward
        self.Y = sweep.Y
        self.Z = sweep.Z
        self.fields = sweep.fits
        self.pathwise = sweep.pathwise
        self.z_se_first = sweep.z_se_first
        self.options = options
        self.Z_terminal = Z_terminal
        self.diagnostics = diagnostics

    @property
    def M(self):
        return self.Y.shape[0]

    @property
    def y0(self):
        """Mean of ``Y`` at the first node (the value at the start point)."""
        return self.Y[:, 0].mean(axis=0)

    @property
    def z0(self):
        return self.Z[:, 0].mean(axis=0)

    @property
    def se_y0(self):
        """Monte Carlo standard error of :attr:`y0` from the telescoped pathwise payoff."""
        M = self.M
        if M < 2:
            return np.full(self.coeffs.k, np.inf)
        return self.pathwise.std(axis=0, ddof=1) / np.sqrt(M)

    @property
    def se_z0(self):
        """Standard error of :attr:`z0`: spread of ``dev dW_0 / dt`` over ``sqrt(M)``."""
        if self.z_se_first is None:
            return np.full(self.Z.shape[2:], np.inf)
        return self.z_se_first

    def y_at(self, i, x):
        """Regressed field ``x -> Y(tau_i, x)`` at points ``x`` (n, d)."""
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        c = self.coeffs
        if i == self.grid.N:
            return c.h(x)
        fit = self.fields[i]
        n = x.shape[0]
        cond = fit.regressor.predict(fit.coef_y, x)
        z = self._z_field(fit, x)
        e = np.broadcast_to(self.bback[i], (n, c.l))
        y = cond
        for _p in range(self.options.picard_inner):
            y = cond + c.fbar(e, x, y, z) * self.grid.dt
        return y

    def z_at(self, i, x):
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        return self._z_field(self.fields[i], x)

    def _z_field(self, fit, x):
        if self.options.z_method == "joint":
            return fit.regressor.predict_increment(fit.coef_z, x)
        return fit.regressor.predict(fit.coef_z, x)

    def l2_norm_Z(self):
        """Per-path ``sum_i ||Z_i||^2 dt``."""
        return (self.Z ** 2).reshape(self.M, self.grid.N, -1).sum(axis=2).sum(axis=1) * self.grid.dt


def _terminal_z(coeffs, XN):
    if coeffs.dh is None:
        return np.zeros((XN.shape[0], coeffs.k, coeffs.d))
    return coeffs.dh(XN) @ coeffs.sigma(XN)


def _check_inputs(coeffs, forward, bundle, bback):
    if forward.grid != bundle.grid:
        raise ValueError("forward solution and bundle use different grids")
    if bback.values.shape[0] != bundle.grid.N + 1:
        raise ValueError("backward functional does not match the bundle grid")
    if forward.M != bundle.M:
        raise ValueError(f"forward has M={forward.M} paths, bundle has M={bundle.M}")
    if forward.d != coeffs.d or bundle.l != coeffs.l:
        raise ValueError("dimension mismatch between coefficients, forward paths and bundle")


def _make_drivers(coeffs, forward, bundle, bback, frozen=None):
    X = forward.X
    M = forward.M
    k, l = coeffs.k, coeffs.l  # noqa: E741

    def e_at(i):
        return np.broadcast_to(bback[i], (M, l))

    def drift(i, y, z):
        if frozen is not None:
            y, z = frozen[0][:, i], frozen[1][:, i]
        return coeffs.fbar(e_at(i), X[:, i], y, z)

    def noise(i, y_next, z_next):
        if coeffs.g_zero:
            return np.zeros((M, k))
        if frozen is not None:
            y_next = frozen[0][:, i + 1]
            z_next = frozen[1][:, i + 1] if i + 1 < frozen[1].shape[1] else frozen[2]
        G = coeffs.gbar(e_at(i + 1), X[:, i + 1], y_next, z_next)
        return G @ bundle.dB[i]

    return drift, noise


def solve_bdsde(coeffs, forward, bundle, bback, reg=RegressionSpec(), options=SchemeOptions()):
    """Backward regression solve of the BDSDE on a fixed backward path."""
    _check_inputs(coeffs, forward, bundle, bback)
    X = forward.X
    N = bundle.grid.N
    XN = X[:, N]
    YN = coeffs.h(XN)
    ZN = _terminal_z(coeffs, XN)
    drift, noise = _make_drivers(coeffs, forward, bundle, bback)
    sweep = backward_sweep(bundle.grid, bundle.dW, YN, ZN,
                           lambda i: NodeRegressor(reg, X[:, i]), drift, noise, options)
    diagnostics = {
        "residual_rms": sweep.residual_rms,
        "warnings": sweep.warnings,
        "degenerate_single_path": forward.M == 1,
    }
    return BDSDESolution(bundle.grid, coeffs, bback, forward, sweep, options, ZN, diagnostics)


@dataclass
class PicardTrace:
    distances: list
    converged: bool
    iterations: int


def picard_solve(coeffs, forward, bundle, bback, reg=RegressionSpec(), tol=1e-6, max_iter=50,
                 options=SchemeOptions()):
    """Global Picard iteration: each pass solves the BDSDE with (Y, Z) frozen in the drivers.

    Starts from ``(Y, Z) = (0, 0)``; the distance between passes is the
    time-integrated L2 norm ``sqrt(sum_i dt E|dY_i|^2 + sum_i dt E|dZ_i|^2)``
    over nodes ``0..N-1``.
    """
    _check_inputs(coeffs, forward, bundle, bback)
    X = forward.X
    M, N = forward.M, bundle.grid.N
    XN = X[:, N]
    YN = coeffs.h(XN)
    ZN = _terminal_z(coeffs, XN)
    Yp = np.zeros((M, N + 1, coeffs.k))
    Zp = np.zeros((M, N, coeffs.k, coeffs.d))
    ZNp = np.zeros_like(ZN)
    lin = SchemeOptions(picard_inner=1, z_control_variate=options.z_control_variate,
                        z_include_g=options.z_include_g, z_method=options.z_method)
    distances = []
    best = None
    for n in range(max_iter):
        drift, noise = _make_drivers(coeffs, forward, bundle, bback, frozen=(Yp, Zp, ZNp))
        sweep = backward_sweep(bundle.grid, bundle.dW, YN, ZN,
                               lambda i: NodeRegressor(reg, X[:, i]), drift, noise, lin)
        dt = bundle.grid.dt
        dy = np.mean(((sweep.Y - Yp)[:, :N] ** 2).reshape(M, N, -1).sum(axis=2), axis=0)
        dz = np.mean(((sweep.Z - Zp) ** 2).reshape(M, N, -1).sum(axis=2), axis=0)
        dist = float(np.sqrt(dt * (dy.sum() + dz.sum())))
        distances.append(dist)
        best = sweep
        Yp, Zp, ZNp = sweep.Y, sweep.Z, ZN
        if dist < tol:
            break
    converged = distances[-1] < tol
    diagnostics = {"residual_rms": best.residual_rms, "warnings": best.warnings,
                   "degenerate_single_path": M == 1, "picard_converged": converged}
    sol = BDSDESolution(bundle.grid, coeffs, bback, forward, best, lin, ZN, diagnostics)
    return sol, PicardTrace(distances, converged, len(distances))


# ---------------------------------------------------------------------------
# assumption checks


_DEFAULT_BOX = {"e": (-2.0, 2.0), "x": (-3.0, 3.0), "y": (-3.0, 3.0), "z": (-3.0, 3.0)}


def _sample(rng, box, n, coeffs):
    k, d, l = coeffs.k, coeffs.d, coeffs.l  # noqa: E741

    def u(name, shape):
        lo, hi = box[name]
        return rng.uniform(lo, hi, size=(n,) + shape)

    return u("e", (l,)), u("x", (d,)), u("y", (k,)), u("z", (k, d))


def check_assumptions(coeffs, sample_count=2000, domain_box=None, seed=0, rel_tol=0.05):
    """Sample-based checks of the Lipschitz/contraction, growth and z-contraction conditions.

    Returns a dict with the estimated constants and a list of violations;
    violations never raise.
    """
    box = dict(_DEFAULT_BOX)
    box.update(domain_box or {})
    for name, (lo, hi) in box.items():
        if not (np.isfinite(lo) and np.isfinite(hi) and lo <= hi):
            raise ValueError(f"check_assumptions: bad bounds for {name!r}: {(lo, hi)}")
    rng = np.random.Generator(np.random.Philox(seed))
    n = int(sample_count)
    k, d, l = coeffs.k, coeffs.d, coeffs.l  # noqa: E741
    e, x, y, z = _sample(rng, box, n, coeffs)
    _, _, y2, z2 = _sample(rng, box, n, coeffs)
    violations = []

    def sq(a):
        return (a.reshape(n, -1) ** 2).sum(axis=1)

    f1 = coeffs.fbar(e, x, y, z)
    f2 = coeffs.fbar(e, x, y2, z2)
    denom = sq(y - y2) + sq(z - z2)
    ratio_f = sq(f1 - f2) / denom
    c_f = float(ratio_f.max())

    g_y1 = coeffs.gbar(e, x, y, z)
    g_y2 = coeffs.gbar(e, x, y2, z)
    c_g = float((sq(g_y1 - g_y2) / sq(y - y2)).max())
    g_z2 = coeffs.gbar(e, x, y, z2)
    ratio_a = sq(g_y1 - g_z2) / sq(z - z2)
    alpha_hat = float(ratio_a.max())
    c_hat = max(c_f, c_g)

    if alpha_hat >= 1.0:
        j = int(np.argmax(ratio_a))
        violations.append({
            "assumption": "lipschitz", "what": f"z-contraction estimate {alpha_hat:.4g} >= 1",
            "witness": {"e": e[j].tolist(), "x": x[j].tolist(), "y": y[j].tolist(),
                        "z": z[j].tolist(), "z2": z2[j].tolist()}})
    if c_hat > coeffs.c * (1 + rel_tol):
        violations.append({"assumption": "lipschitz",
                           "what": f"Lipschitz estimate {c_hat:.4g} exceeds declared c={coeffs.c}"})
    if alpha_hat > coeffs.alpha * (1 + rel_tol) + 1e-12 and alpha_hat < 1.0:
        violations.append({"assumption": "lipschitz",
                           "what": f"z-contraction {alpha_hat:.4g} exceeds declared alpha={coeffs.alpha}"})

    # growth condition as a k x k matrix inequality
    g = g_y1
    g00 = coeffs.gbar(e, x, np.zeros_like(y), np.zeros_like(z))
    zz = np.einsum("nad,nbd->nab", z, z)
    rhs = zz + (coeffs.C * (sq(g00) + sq(y)))[:, None, None] * np.eye(k)
    gap = np.linalg.eigvalsh(rhs - np.einsum("nal,nbl->nab", g, g))[:, 0]
    growth_min = float(gap.min())
    if growth_min < -1e-10:
        j = int(np.argmin(gap))
        violations.append({"assumption": "growth", "what": f"min eigenvalue {growth_min:.4g} < 0",
                           "witness": {"e": e[j].tolist(), "x": x[j].tolist(),
                                       "y": y[j].tolist(), "z": z[j].tolist()}})

    zcontract_min = None
    if coeffs.gbar_z is not None:
        theta = rng.standard_normal((n, k, d))
        Gz = coeffs.gbar_z(e, x, y, z)  # (n, k, l, k, d)
        gt = np.einsum("nalcd,ncd->nal", Gz, theta)
        lhs = np.einsum("nal,nbl->nab", gt, gt)
        tt = np.einsum("nad,nbd->nab", theta, theta)
        gap3 = np.linalg.eigvalsh(tt - lhs)[:, 0]
        scale = np.linalg.eigvalsh(tt)[:, -1]
        zcontract_min = float((gap3 / scale).min())
        if zcontract_min < -1e-10:
            j = int(np.argmin(gap3 / scale))
            violations.append({"assumption": "z-derivative-contraction",
                               "what": f"min relative eigenvalue {zcontract_min:.4g} < 0",
                               "witness": {"e": e[j].tolist(), "x": x[j].tolist(), "y": y[j].tolist(),
                                           "z": z[j].tolist(), "theta": theta[j].tolist()}})

    return {
        "coefficients": coeffs.name,
        "samples": n,
        "box": {kk: list(v) for kk, v in box.items()},
        "c_hat": c_hat,
        "c_f": c_f,
        "c_g": c_g,
        "alpha_hat": alpha_hat,
        "growth_min_eig": growth_min,
        "zcontract_min_rel_eig": zcontract_min,
        "declared": {"c": coeffs.c, "alpha": coeffs.alpha, "C": coeffs.C},
        "violations": violations,
        "ok": not violations,
    }


def moment_diagnostics(solutions, p=2, x_values=None):
    """Empirical moments ``E sup|Y|^p`` and ``E (int ||Z||^2)^{p/2}`` per start point.

    ``solutions`` is a sequence aligned with ``x_values``. The fitted slope of
    log-moment against ``log(1 + |x|)`` estimates the polynomial growth exponent.
    """
    if p not in (2, 4):
        raise ValueError(f"moment order p must be 2 or 4, got {p}")
    if x_values is None:
        x_values = [np.linalg.norm(s.forward.x0) for s in solutions]
    rows = []
    for x, sol in zip(x_values, solutions):
        supY = np.abs(sol.Y).reshape(sol.M, sol.grid.N + 1, -1)
        supY = np.sqrt((supY ** 2).sum(axis=2)).max(axis=1)
        qz = sol.l2_norm_Z()
        rows.append({"x": float(np.linalg.norm(np.atleast_1d(x))),
                     "sup_Y_p": float(np.mean(supY ** p)),
                     "Z_p": float(np.mean(qz ** (p / 2)))})
    xs = np.array([r["x"] for r in rows])
    ms = np.array([r["sup_Y_p"] for r in rows])
    q_hat = None
    ok = ms > 0
    if ok.sum() >= 2 and np.ptp(xs[ok]) > 0:
        q_hat = float(np.polyfit(np.log1p(xs[ok]), np.log(ms[ok]), 1)[0])
    finite = all(np.isfinite(r["sup_Y_p"]) and np.isfinite(r["Z_p"]) for r in rows)
    return {"p": p, "rows": rows, "q_hat": q_hat, "finite": finite}
