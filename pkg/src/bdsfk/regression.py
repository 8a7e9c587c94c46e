"""Cross-sectional least squares for conditional expectations given the state.

A :class:`NodeRegressor` standardizes the state at one time node, builds the
basis once and factors the (ridged) Gram matrix once, so several targets can
be projected at the cost of triangular solves.
"""
import itertools
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_factor, cho_solve

__all__ = ["RegressionSpec", "Basis", "NodeRegressor", "TangentRegressor", "RegressionWarning"]

_SPREAD_TOL = 1e-12
_COND_LIMIT = 1e12


class RegressionWarning(UserWarning):
    pass


@dataclass(frozen=True)
class RegressionSpec:
    basis_kind: str = "polynomial"
    degree: int = 3
    bins: int = 8
    ridge: float = 1e-8

    def __post_init__(self):
        if self.basis_kind not in ("polynomial", "piecewise-linear"):
            raise ValueError(f"RegressionSpec: unknown basis_kind {self.basis_kind!r}")
        if int(self.degree) != self.degree or self.degree < 0:
            raise ValueError(f"RegressionSpec: degree must be >= 0, got {self.degree!r}")
        if int(self.bins) != self.bins or self.bins < 1:
            raise ValueError(f"RegressionSpec: bins must be >= 1, got {self.bins!r}")
        if not self.ridge >= 0:
            raise ValueError(f"RegressionSpec: ridge must be >= 0, got {self.ridge!r}")


class Basis:
    """Basis functions of a standardized state; frozen once fitted to a node."""

    def __init__(self, spec, mean, scale, active, knots=None):
        self.spec = spec
        self.mean = mean
        self.scale = scale
        self.active = active
        self.knots = knots
        if spec.basis_kind == "polynomial":
            dims = np.flatnonzero(active)
            exps = []
            for total in range(spec.degree + 1):
                for combo in itertools.combinations_with_replacement(dims, total):
                    e = np.zeros(len(active), dtype=int)
                    for c in combo:
                        e[c] += 1
                    exps.append(e)
            self.exponents = np.array(exps, dtype=int).reshape(-1, len(active))
            self.size = len(self.exponents)
        else:
            self.exponents = None
            self.size = 1 if not active.any() else 2 + len(knots)

    @classmethod
    def fit(cls, spec, X):
        M, d = X.shape
        mean = X.mean(axis=0)
        scale = X.std(axis=0)
        active = (scale > _SPREAD_TOL * np.maximum(1.0, np.abs(mean))) & (M > 1)
        scale = np.where(active, scale, 1.0)
        knots = None
        if spec.basis_kind == "piecewise-linear":
            if d != 1:
                raise ValueError("piecewise-linear basis supports d = 1 only")
            knots = np.empty(0)
            if active[0] and spec.bins > 1:
                s = (X[:, 0] - mean[0]) / scale[0]
                q = np.linspace(0.0, 1.0, spec.bins + 1)[1:-1]
                knots = np.unique(np.quantile(s, q))
        return cls(spec, mean, scale, active, knots)

    def __call__(self, X):
        s = (X - self.mean) / self.scale
        n = X.shape[0]
        if self.spec.basis_kind == "polynomial":
            out = np.ones((n, self.size))
            powers = {}
            for col, e in enumerate(self.exponents):
                for dim in np.flatnonzero(e):
                    key = (dim, e[dim])
                    if key not in powers:
                        powers[key] = s[:, dim] ** e[dim]
                    out[:, col] *= powers[key]
            return out
        out = np.ones((n, self.size))
        if self.size > 1:
            x = s[:, 0]
            out[:, 1] = x
            for j, kn in enumerate(self.knots):
                out[:, 2 + j] = np.maximum(x - kn, 0.0)
        return out


def _factor(A, ridge, free_intercept=False):
    n = A.shape[0]
    G = A.T @ A / n
    p = G.shape[0]
    pen = np.full(p, ridge)
    if free_intercept:
        pen[0] = 0.0
    G[np.diag_indices(p)] += pen
    warn = None
    ev = np.linalg.eigvalsh(G)
    if not ev[-1] > 0:
        # all features vanish: every projection is zero
        return cho_factor(np.eye(p), lower=True), None
    if ev[0] <= ev[-1] / _COND_LIMIT:
        extra = ev[-1] / _COND_LIMIT * 1e3
        G[np.diag_indices(p)] += extra
        warn = f"ill-conditioned regression (min eig {ev[0]:.3e}); ridge raised by {extra:.3e}"
    return cho_factor(G, lower=True, check_finite=False), warn


class NodeRegressor:
    """Projection onto the span of basis functions of the state ``X`` (M, d)."""

    def __init__(self, spec, X):
        self.spec = spec
        self.basis = Basis.fit(spec, X)
        self.A = self.basis(X)
        self.n = X.shape[0]
        self.factor, self.warning = _factor(self.A, spec.ridge, free_intercept=True)
        if self.warning:
            warnings.warn(self.warning, RegressionWarning, stacklevel=2)

    def fit(self, target):
        """Coefficients (p, ...) for a target of shape (M, ...)."""
        t = target.reshape(self.n, -1)
        coef = cho_solve(self.factor, self.A.T @ t / self.n, check_finite=False)
        return coef.reshape((self.basis.size,) + target.shape[1:])

    def predict(self, coef, X=None):
        A = self.A if X is None else self.basis(X)
        p = coef.shape[0]
        return (A @ coef.reshape(p, -1)).reshape((A.shape[0],) + coef.shape[1:])

    def project(self, target):
        coef = self.fit(target)
        return self.predict(coef), coef

    def project_increment(self, dev, w, scale):
        """Regress ``dev`` (M, k, ...) on ``phi_p(X) w_j``; returns values (M, k, d, ...) / ``scale``.

        ``w`` (M, d) are standardized increments independent of the state.
        """
        M, p = self.A.shape
        d = w.shape[1]
        F = (self.A[:, :, None] * w[:, None, :]).reshape(M, p * d)
        factor, warn = _factor(F, self.spec.ridge)
        if warn:
            warnings.warn(warn, RegressionWarning, stacklevel=2)
        t = dev.reshape(M, -1)
        coef = cho_solve(factor, F.T @ t / M, check_finite=False)
        coef = coef.reshape((p, d) + dev.shape[1:]) / scale
        resid = t - F @ coef.reshape(p * d, -1) * scale
        return self.predict_increment(coef), (coef, resid)

    def predict_increment(self, coef, X=None):
        A = self.A if X is None else self.basis(X)
        Z = np.tensordot(A, coef, axes=(1, 0))  # (M, d, k, ...)
        return np.moveaxis(Z, 1, 2)


class TangentRegressor:
    """Projection for layers linear in a tangent: ``L[a, j] = v_a(X) . Tan[:, j]``.

    ``Tan`` has shape (M, d, q); targets have shape (M, ..., q). The feature
    for basis function ``p`` and state direction ``m`` is ``phi_p(X) Tan[m, j]``
    with one regression row per (path, column ``j``).
    """

    def __init__(self, spec, X, Tan):
        self.spec = spec
        self.basis = Basis.fit(spec, X)
        self.Tan = Tan
        M, d, q = Tan.shape
        self.M, self.d, self.q = M, d, q
        self.A = self._features(self.basis(X), Tan)
        self.factor, self.warning = _factor(self.A, spec.ridge)
        if self.warning:
            warnings.warn(self.warning, RegressionWarning, stacklevel=2)

    def _features(self, phi, Tan):
        M, d, q = Tan.shape
        # rows (path, j), columns (p, m)
        F = phi[:, None, :, None] * Tan.transpose(0, 2, 1)[:, :, None, :]
        return F.reshape(M * q, phi.shape[1] * d)

    def _rows(self, target):
        # (M, ..., q) -> (M*q, prod(...))
        t = np.moveaxis(target, -1, 1)
        return t.reshape(self.M * self.q, -1), target.shape[1:-1]

    def fit(self, target):
        rows, out_shape = self._rows(target)
        n = rows.shape[0]
        coef = cho_solve(self.factor, self.A.T @ rows / n, check_finite=False)
        return coef, out_shape

    def predict(self, fitted, X=None, Tan=None):
        coef, out_shape = fitted
        if X is None:
            A, M, q = self.A, self.M, self.q
        else:
            A = self._features(self.basis(X), Tan)
            M, q = Tan.shape[0], Tan.shape[2]
        vals = (A @ coef).reshape((M, q) + out_shape)
        return np.moveaxis(vals, 1, -1)

    def project(self, target):
        fitted = self.fit(target)
        return self.predict(fitted), fitted

    def project_increment(self, dev, w, scale):
        """Regress ``dev`` (M, k, q) on tangent features times ``w_n``; values (M, k, d, q) / ``scale``."""
        M, q = self.M, self.q
        d = w.shape[1]
        P = self.A.shape[1]
        wr = np.repeat(w, q, axis=0)  # rows (path, j)
        F = (self.A[:, :, None] * wr[:, None, :]).reshape(M * q, P * d)
        factor, warn = _factor(F, self.spec.ridge)
        if warn:
            warnings.warn(warn, RegressionWarning, stacklevel=2)
        rows, out_shape = self._rows(dev)
        coef = cho_solve(factor, F.T @ rows / rows.shape[0], check_finite=False) / scale
        vals = (self.A @ coef.reshape(P, -1)).reshape((M, q, d) + out_shape)
        # (M, q, d, k) -> (M, k, d, q)
        Z = np.moveaxis(np.moveaxis(vals, 1, -1), 1, 2)
        resid = (rows - F @ coef * scale).reshape((M, q) + out_shape)
        resid = np.moveaxis(resid, 1, -1).reshape(M, -1)
        return Z, ((coef, out_shape, d), resid)
