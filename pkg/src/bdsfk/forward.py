"""Euler-Maruyama for the forward diffusion and its first-order tangent flow."""
import numpy as np

__all__ = [
    "ForwardSolution",
    "NonFiniteStateError",
    "SingularFlowError",
    "euler_forward",
    "tangent_flow",
    "solve_forward",
    "malliavin_DX",
    "RESYNC_EVERY",
    "SINGULAR_COND",
]

RESYNC_EVERY = 16
SINGULAR_COND = 1e12


class NonFiniteStateError(FloatingPointError):
    def __init__(self, path, node):
        super().__init__(f"non-finite forward state on path {path} at node {node}")
        self.path = path
        self.node = node


class SingularFlowError(np.linalg.LinAlgError):
    def __init__(self, path, node):
        super().__init__(f"tangent flow singular on path {path} at node {node}")
        self.path = path
        self.node = node


class ForwardSolution:
    """Per-path trajectories ``X`` (M, N+1, d) and optionally the tangent flow.

    ``gradX`` and ``gradX_inv`` have shape (M, N+1, d, d); ``singular`` flags
    paths whose flow became numerically singular.
    """

    def __init__(self, grid, x0, X, gradX=None, gradX_inv=None, singular=None):
        self.grid = grid
        self.x0 = x0
        self.X = X
        self.gradX = gradX
        self.gradX_inv = gradX_inv
        self.singular = singular

    @property
    def M(self):
        return self.X.shape[0]

    @property
    def d(self):
        return self.X.shape[2]

    @property
    def has_flow(self):
        return self.gradX is not None


def _check_bundle(coeffs, bundle):
    if bundle.d != coeffs.d:
        raise ValueError(f"bundle has d={bundle.d} but coefficients expect d={coeffs.d}")
    if bundle.l != coeffs.l:
        raise ValueError(f"bundle has l={bundle.l} but coefficients expect l={coeffs.l}")


def euler_forward(coeffs, x, bundle):
    """Euler-Maruyama paths started at ``x`` on the bundle's grid."""
    _check_bundle(coeffs, bundle)
    x = np.asarray(x, dtype=np.float64).reshape(coeffs.d)
    g = bundle.grid
    M, N, d = bundle.M, g.N, coeffs.d
    X = np.empty((M, N + 1, d))
    X[:, 0, :] = x
    dt = g.dt
    for i in range(N):
        xi = X[:, i, :]
        X[:, i + 1, :] = (xi + coeffs.b(xi) * dt
                          + np.einsum("mij,mj->mi", coeffs.sigma(xi), bundle.dW[:, i, :]))
        bad = ~np.isfinite(X[:, i + 1, :]).all(axis=1)
        if bad.any():
            raise NonFiniteStateError(int(np.argmax(bad)), i + 1)
    return ForwardSolution(g, x, X)


def tangent_flow(coeffs, forward, bundle, resync_every=RESYNC_EVERY):
    """Propagate the tangent flow and its inverse along existing paths.

    The inverse follows the exact inverse of each Euler factor and is
    re-synchronized by direct inversion every ``resync_every`` steps.
    """
    if coeffs.db is None or coeffs.dsigma is None:
        from .coefficients import MissingDerivativeError

        raise MissingDerivativeError("tangent_flow needs analytic db and dsigma")
    g = forward.grid
    M, N, d = forward.M, g.N, forward.d
    dt = g.dt
    eye = np.eye(d)
    J = np.empty((M, N + 1, d, d))
    Jinv = np.empty((M, N + 1, d, d))
    J[:, 0] = eye
    Jinv[:, 0] = eye
    singular = np.zeros(M, dtype=bool)
    for i in range(N):
        xi = forward.X[:, i, :]
        # A[a, n] = db_a/dx_n dt + sum_j dsigma_aj/dx_n dW_j
        A = coeffs.db(xi) * dt + np.einsum("majn,mj->man", coeffs.dsigma(xi), bundle.dW[:, i, :])
        step = eye + A
        J[:, i + 1] = step @ J[:, i]
        if d == 1:
            with np.errstate(divide="ignore", invalid="ignore"):
                Jinv[:, i + 1] = Jinv[:, i] / step
        else:
            with np.errstate(all="ignore"):
                try:
                    Jinv[:, i + 1] = np.linalg.solve(step.transpose(0, 2, 1),
                                                     Jinv[:, i].transpose(0, 2, 1)).transpose(0, 2, 1)
                except np.linalg.LinAlgError:
                    Jinv[:, i + 1] = np.nan
        if (i + 1) % resync_every == 0 or i + 1 == N:
            Jinv[:, i + 1] = _safe_inv(J[:, i + 1])
        cond = _cond(J[:, i + 1])
        singular |= ~(cond < SINGULAR_COND)
    forward.gradX = J
    forward.gradX_inv = Jinv
    forward.singular = singular
    return forward


def _safe_inv(A):
    if A.shape[-1] == 1:
        with np.errstate(divide="ignore"):
            return 1.0 / A
    out = np.full_like(A, np.nan)
    ok = np.abs(np.linalg.det(A)) > 0
    if ok.any():
        out[ok] = np.linalg.inv(A[ok])
    return out


def _cond(A):
    if A.shape[-1] == 1:
        a = np.abs(A[:, 0, 0])
        # condition of a 1x1 flow measured against the unit scale of the identity
        with np.errstate(divide="ignore"):
            return np.maximum(a, 1.0 / a)
    with np.errstate(all="ignore"):
        return np.linalg.cond(A)


def solve_forward(coeffs, x, bundle, flow=True):
    fw = euler_forward(coeffs, x, bundle)
    if flow:
        tangent_flow(coeffs, fw, bundle)
    return fw


def malliavin_DX(forward, theta_index, coeffs):
    """``grad X_s (grad X_theta)^{-1} sigma(X_theta)`` for ``s >= theta``, zero before.

    Returns an array of shape (M, N+1, d, d).
    """
    if not forward.has_flow:
        raise ValueError("malliavin_DX needs the tangent flow; call tangent_flow first")
    N = forward.grid.N
    if not 0 <= theta_index <= N:
        raise IndexError(f"theta node {theta_index} outside [0, {N}]")
    bad = forward.singular & _singular_at(forward, theta_index)
    if bad.any():
        raise SingularFlowError(int(np.argmax(bad)), theta_index)
    xt = forward.X[:, theta_index, :]
    c = forward.gradX_inv[:, theta_index] @ coeffs.sigma(xt)
    out = np.zeros_like(forward.gradX)
    out[:, theta_index:] = forward.gradX[:, theta_index:] @ c[:, None]
    # the flow factor cancels exactly at s = theta
    out[:, theta_index] = coeffs.sigma(xt)
    return out


def _singular_at(forward, i):
    return ~(_cond(forward.gradX[:, i]) < SINGULAR_COND) | ~np.isfinite(forward.gradX_inv[:, i]).all(axis=(1, 2))
