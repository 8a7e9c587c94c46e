"""Linearized BDSDEs: the x-gradient layer and Malliavin-derivative layers.

Both layers solve the same linear BDSDE around a frozen base solution; they
differ only in the tangent they carry (``grad X_s`` or ``D_theta X_s``) and in
the node where the sweep stops. Regression uses features linear in the
tangent, since ``grad Y_s = v(s, X_s) grad X_s`` for a deterministic-in-W field
``v``.
"""
from dataclasses import dataclass, field

import numpy as np

from .bdsde import SchemeOptions, backward_sweep, solve_bdsde
from .forward import malliavin_DX, solve_forward
from .regression import RegressionSpec, TangentRegressor

__all__ = [
    "VariationalSolution",
    "solve_linear_layer",
    "solve_variational",
    "solve_malliavin_D",
    "identity_checks",
    "theta_subgrid",
    "malliavin_norm",
    "fd_gradient_check",
]


@dataclass
class VariationalSolution:
    """``gradY`` (M, N+1, k, d), ``gradZ`` (M, N, k, d, d) and D-layers keyed by theta node."""

    gradY: np.ndarray = None
    gradZ: np.ndarray = None
    DY: dict = field(default_factory=dict)
    DZ: dict = field(default_factory=dict)


def _base_yz(base, i):
    Y = base.Y[:, i]
    Z = base.Z[:, i] if i < base.grid.N else base.Z_terminal
    return Y, Z


def solve_linear_layer(coeffs, forward, bundle, bback, base, tangent, terminal,
                       reg=RegressionSpec(), stop=0, forcing=True, options=None):
    """Backward sweep of the linear BDSDE carried by ``tangent`` (M, N+1, d, q).

    Drivers are ``F = f_x T + f_y L + f_z LZ`` and ``G`` likewise, with all
    derivatives evaluated at the base ``(Bb, X, Y, Z)``; ``forcing=False``
    drops the ``f_x T`` and ``g_x T`` terms.
    """
    coeffs.require_derivatives()
    options = options or base.options
    X = forward.X
    M = forward.M
    k, d, l = coeffs.k, coeffs.d, coeffs.l  # noqa: E741
    q = tangent.shape[-1]
    N = bundle.grid.N

    def e_at(i):
        return np.broadcast_to(bback[i], (M, l))

    def drift(i, Ly, Lz):
        Yb, Zb = _base_yz(base, i)
        args = (e_at(i), X[:, i], Yb, Zb)
        out = np.einsum("mab,mbq->maq", coeffs.fbar_y(*args), Ly)
        out += np.einsum("mabd,mbdq->maq", coeffs.fbar_z(*args), Lz)
        if forcing:
            out += np.einsum("mad,mdq->maq", coeffs.fbar_x(*args), tangent[:, i])
        return out

    def noise(i, Ly, Lz):
        if coeffs.g_zero:
            return np.zeros((M, k, q))
        j = i + 1
        Yb, Zb = _base_yz(base, j)
        args = (e_at(j), X[:, j], Yb, Zb)
        G = np.einsum("malb,mbq->malq", coeffs.gbar_y(*args), Ly)
        G += np.einsum("malbd,mbdq->malq", coeffs.gbar_z(*args), Lz)
        if forcing:
            G += np.einsum("mald,mdq->malq", coeffs.gbar_x(*args), tangent[:, j])
        return np.einsum("malq,l->maq", G, bundle.dB[i])

    # the z-layer at T would need second derivatives of h; it is taken as zero
    terminal_z = np.zeros((M, k, d, q))
    sweep = backward_sweep(
        bundle.grid, bundle.dW, terminal, terminal_z,
        lambda i: TangentRegressor(reg, X[:, i], tangent[:, i]),
        drift, noise, options, stop=stop)
    return sweep


def solve_variational(coeffs, forward, bundle, bback, base, reg=RegressionSpec()):
    """Gradient layer ``(grad Y, grad Z)`` with terminal ``h'(X_T) grad X_T``."""
    coeffs.require_derivatives()
    if not forward.has_flow:
        raise ValueError("solve_variational needs the tangent flow of the forward paths")
    N = bundle.grid.N
    XN = forward.X[:, N]
    terminal = coeffs.dh(XN) @ forward.gradX[:, N]
    sweep = solve_linear_layer(coeffs, forward, bundle, bback, base, forward.gradX, terminal, reg)
    return VariationalSolution(gradY=sweep.Y, gradZ=sweep.Z)


def solve_malliavin_D(coeffs, forward, bundle, bback, base, theta_index, reg=RegressionSpec(),
                      out=None):
    """Malliavin layer for one theta node; zero before theta by construction."""
    coeffs.require_derivatives()
    N = bundle.grid.N
    DX = malliavin_DX(forward, theta_index, coeffs)
    XN = forward.X[:, N]
    terminal = coeffs.dh(XN) @ DX[:, N]
    out = out or VariationalSolution()
    if theta_index == N:
        M = forward.M
        DY = np.zeros((M, N + 1, coeffs.k, coeffs.d))
        DY[:, N] = terminal
        out.DY[theta_index] = DY
        out.DZ[theta_index] = np.zeros((M, N, coeffs.k, coeffs.d, coeffs.d))
        return out
    sweep = solve_linear_layer(coeffs, forward, bundle, bback, base, DX, terminal, reg,
                               stop=theta_index)
    out.DY[theta_index] = sweep.Y
    out.DZ[theta_index] = sweep.Z
    return out


def _rms(a, axis=None):
    return float(np.sqrt(np.mean(np.asarray(a) ** 2, axis=axis)))


def identity_checks(var, forward, base, coeffs=None, sample_nodes=None):
    """Residuals of the gradient/Malliavin identities linking Z, grad Y and D Y.

    * ``z_grad``: RMS over paths and nodes of ``Z - grad Y (grad X)^{-1} sigma(X)``
    * ``z0_grad``: ``|Z_0 - grad Y_0 sigma(x)|`` at the start point
    * ``dy_diag``: RMS of ``D_s Y_s - Z_s`` over the theta layers present
    * ``dy_product``: RMS of ``D_theta Y_s - grad Y_s (grad X_theta)^{-1} sigma(X_theta)``
    """
    coeffs = coeffs or base.coeffs
    N = base.grid.N
    ok = ~forward.singular if forward.singular is not None else np.ones(forward.M, bool)
    report = {"paths_used": int(ok.sum())}
    if var.gradY is not None:
        nodes = range(N) if sample_nodes is None else sample_nodes
        res = []
        for i in nodes:
            xi = forward.X[ok, i]
            prod = var.gradY[ok, i] @ forward.gradX_inv[ok, i] @ coeffs.sigma(xi)
            res.append(np.mean((base.Z[ok, i] - prod) ** 2))
        report["z_grad"] = float(np.sqrt(np.mean(res)))
        x0 = forward.X[:1, 0]
        z0 = base.Z[:, 0].mean(axis=0)
        gy0 = var.gradY[:, 0].mean(axis=0)
        report["z0_grad"] = _rms(z0 - gy0 @ coeffs.sigma(x0)[0])
        report["z0"] = z0.tolist()
        report["grad_y0_sigma"] = (gy0 @ coeffs.sigma(x0)[0]).tolist()
    diag, prod_res = {}, {}
    for th, DY in sorted(var.DY.items()):
        if th < N:
            diag[th] = _rms(DY[ok, th] - base.Z[ok, th])
        if var.gradY is not None:
            c = forward.gradX_inv[ok, th] @ coeffs.sigma(forward.X[ok, th])
            pred = var.gradY[ok, th:] @ c[:, None]
            prod_res[th] = _rms(DY[ok, th:] - pred)
    if diag:
        report["dy_diag"] = diag
    if prod_res:
        report["dy_product"] = prod_res
    return report


def theta_subgrid(node, count=8):
    """``count`` equispaced node indices covering ``[0, node]`` (deduplicated)."""
    return sorted(set(int(round(v)) for v in np.linspace(0, node, count)))


def malliavin_norm(base, var, node=0):
    """Quadrature approximation of ``E Y_s^2 + E int_{t0}^{s} |D_theta Y_s|^2 dtheta``.

    Uses the theta layers present in ``var`` with the trapezoidal rule; they
    must include theta nodes ``0`` and ``node``.
    """
    Ys = base.Y[:, node]
    total = float(np.mean((Ys ** 2).reshape(base.M, -1).sum(axis=1)))
    if node == 0:
        return total
    thetas = sorted(t for t in var.DY if t <= node)
    if not thetas or thetas[0] != 0 or thetas[-1] != node:
        raise ValueError(f"theta layers must cover nodes 0 and {node}, have {thetas}")
    vals = np.array([np.mean((var.DY[t][:, node] ** 2).reshape(base.M, -1).sum(axis=1))
                     for t in thetas])
    times = base.grid.nodes[thetas]
    return total + float(np.sum(0.5 * (vals[1:] + vals[:-1]) * np.diff(times)))


def fd_gradient_check(coeffs, bundle, bback, x, eps, reg=RegressionSpec(), central=False,
                      options=SchemeOptions()):
    """Difference quotients of ``Y_0`` in ``x`` on a shared bundle versus ``grad Y_0``."""
    if not eps > 0:
        raise ValueError("eps must be positive")
    x = np.asarray(x, dtype=np.float64).reshape(coeffs.d)
    fw = solve_forward(coeffs, x, bundle)
    base = solve_bdsde(coeffs, fw, bundle, bback, reg, options)
    var = solve_variational(coeffs, fw, bundle, bback, base, reg)
    grad = var.gradY[:, 0].mean(axis=0)  # (k, d)
    quot = np.empty_like(grad)
    for i in range(coeffs.d):
        e = np.zeros(coeffs.d)
        e[i] = eps
        up = solve_bdsde(coeffs, solve_forward(coeffs, x + e, bundle, flow=False), bundle, bback,
                         reg, options).y0
        if central:
            dn = solve_bdsde(coeffs, solve_forward(coeffs, x - e, bundle, flow=False), bundle,
                             bback, reg, options).y0
            quot[:, i] = (up - dn) / (2 * eps)
        else:
            quot[:, i] = (up - base.y0) / eps
    denom = np.maximum(np.abs(grad), 1e-12)
    return {
        "x": x.tolist(),
        "eps": eps,
        "central": central,
        "quotient": quot,
        "grad_y0": grad,
        "abs_error": np.abs(quot - grad),
        "rel_error": np.abs(quot - grad) / denom,
    }


