"""Brownian drivers, the backward functional of B, and Ito quadrature rules.

All randomness comes from counter-based Philox streams keyed by a 64-bit seed:
path ``m`` of the forward driver W always reads stream ``m``, so bundles are
reproducible under any evaluation order or thread count and stable under
growth of the path count.
"""
import struct

import numpy as np

from . import kernels

__all__ = [
    "TimeGrid",
    "BrownianBundle",
    "BackwardBFunctional",
    "gen_bundle",
    "refine_bundle",
    "coarsen_bundle",
    "backward_B",
    "backward_ito_sum",
    "forward_ito_sum",
    "dump_paths",
    "load_paths",
]

_MASK64 = 0xFFFFFFFFFFFFFFFF
KIND_W = 0
KIND_B = 1
B_STREAM = 0


def _domain(kind, depth=0, factor=0):
    # kind in low 4 bits, refinement depth and factor above it
    return (kind & 0xF) | ((depth & 0xFF) << 4) | ((factor & 0xFFFFF) << 12)


class TimeGrid:
    """Uniform partition ``t0 = tau_0 < ... < tau_N = T``."""

    def __init__(self, t0, T, N):
        t0 = float(t0)
        T = float(T)
        if not (np.isfinite(t0) and np.isfinite(T)):
            raise ValueError("TimeGrid: t0 and T must be finite")
        if int(N) != N or N < 1:
            raise ValueError(f"TimeGrid: N must be an integer >= 1, got {N!r}")
        if not T > t0:
            raise ValueError(f"TimeGrid: need t0 < T, got t0={t0}, T={T}")
        self.t0 = t0
        self.T = T
        self.N = int(N)
        self.dt = (T - t0) / self.N
        nodes = t0 + self.dt * np.arange(self.N + 1, dtype=np.float64)
        nodes[-1] = T
        self.nodes = nodes

    def __repr__(self):
        return f"TimeGrid(t0={self.t0!r}, T={self.T!r}, N={self.N})"

    def __eq__(self, other):
        return (isinstance(other, TimeGrid) and self.N == other.N
                and self.dt == other.dt and np.array_equal(self.nodes, other.nodes))

    def sub(self, i0):
        """The grid restricted to nodes ``i0..N`` (same step and node values)."""
        if not 0 <= i0 < self.N:
            raise IndexError(f"sub-grid start {i0} outside [0, {self.N})")
        g = object.__new__(TimeGrid)
        g.t0 = float(self.nodes[i0])
        g.T = self.T
        g.N = self.N - i0
        g.dt = self.dt
        g.nodes = self.nodes[i0:].copy()
        return g

    def index_of(self, t, tol=1e-9):
        """Node index of time ``t``; raises if ``t`` is not a grid node."""
        i = int(round((t - self.t0) / self.dt))
        if i < 0 or i > self.N or abs(self.nodes[i] - t) > tol * max(1.0, abs(t)):
            raise ValueError(f"time {t} is not a node of {self!r}")
        return i


class BrownianBundle:
    """Forward increments ``dW`` (M, N, d) and one backward path ``dB`` (N, l)."""

    def __init__(self, grid, dW, dB, seed, b_seed, stream_ids, depth_w=0, depth_b=0):
        self.grid = grid
        self.dW = dW
        self.dB = dB
        self.seed = seed
        self.b_seed = b_seed
        self.stream_ids = stream_ids
        self.depth_w = depth_w
        self.depth_b = depth_b

    @property
    def M(self):
        return self.dW.shape[0]

    @property
    def d(self):
        return self.dW.shape[2]

    @property
    def l(self):  # noqa: E743
        return self.dB.shape[1]

    @property
    def B(self):
        """Backward-driver path values at the nodes, with ``B[0] = 0``."""
        out = np.zeros((self.grid.N + 1, self.l))
        np.cumsum(self.dB, axis=0, out=out[1:])
        return out

    def restrict(self, i0):
        """Bundle on the sub-grid starting at node ``i0``; increments are views."""
        return BrownianBundle(self.grid.sub(i0), self.dW[:, i0:, :], self.dB[i0:, :],
                              self.seed, self.b_seed, self.stream_ids,
                              self.depth_w, self.depth_b)

    def take(self, M):
        """The first ``M`` forward paths (stream ids are per path, so this is a prefix)."""
        if not 1 <= M <= self.M:
            raise ValueError(f"cannot take M={M} paths from a bundle of {self.M}")
        return BrownianBundle(self.grid, self.dW[:M], self.dB, self.seed, self.b_seed,
                              self.stream_ids[:M], self.depth_w, self.depth_b)

    def with_b(self, dB, b_seed=None):
        """Same W paths, different backward path (used by seed-sensitivity checks)."""
        return BrownianBundle(self.grid, self.dW, dB, self.seed, b_seed,
                              self.stream_ids, self.depth_w, self.depth_b)


def _check_dims(**dims):
    for name, value in dims.items():
        if int(value) != value or value < 1:
            raise ValueError(f"gen_bundle: {name} must be an integer >= 1, got {value!r}")


def gen_bundle(seed, grid, M, d, l, b_seed=None, threads=1):  # noqa: E741
    """Generate ``M`` forward paths and one backward path on ``grid``.

    ``b_seed`` keys the backward driver independently of the forward one;
    when omitted the master ``seed`` is used (W and B stay independent through
    stream-domain separation).
    """
    _check_dims(M=M, d=d, l=l)
    seed = int(seed) & _MASK64
    b_seed = seed if b_seed is None else int(b_seed) & _MASK64
    N = grid.N
    sqdt = np.sqrt(grid.dt)
    streams = np.arange(M, dtype=np.uint64)
    zw = kernels.standard_normals(seed, _domain(KIND_W), streams, N * d, threads=threads)
    dW = (zw * sqdt).reshape(M, N, d)
    zb = kernels.standard_normals(b_seed, _domain(KIND_B), np.array([B_STREAM], np.uint64), N * l)
    dB = (zb[0] * sqdt).reshape(N, l)
    return BrownianBundle(grid, dW, dB, seed, b_seed, streams)


def _bridge(coarse, z, factor, sub_dt):
    # coarse: (..., n); z: (..., n, factor) iid N(0,1). Exact conditional split of each
    # coarse increment into `factor` equal-length pieces that sum to it.
    xi = z * np.sqrt(sub_dt)
    corr = (coarse - xi.sum(axis=-1)) / factor
    return xi + corr[..., None]


def refine_bundle(bundle, factor, threads=1):
    """Brownian-bridge refinement by an integer ``factor``.

    The coarse bundle is exactly the restriction of the refined one: summing
    each group of ``factor`` fine increments recovers the coarse increment
    (up to rounding).
    """
    if int(factor) != factor or factor < 1:
        raise ValueError(f"refine factor must be an integer >= 1, got {factor!r}")
    factor = int(factor)
    if factor == 1:
        return bundle
    g = bundle.grid
    fine = TimeGrid(g.t0, g.T, g.N * factor)
    M, N, d, l = bundle.M, g.N, bundle.d, bundle.l  # noqa: E741
    sub_dt = fine.dt
    dw_dom = _domain(KIND_W, bundle.depth_w + 1, factor)
    zw = kernels.standard_normals(bundle.seed, dw_dom, bundle.stream_ids, N * d * factor,
                                  threads=threads)
    # coarse layout (M, N, d) -> (M, N, d, factor) -> fine (M, N*factor, d)
    fw = _bridge(bundle.dW, zw.reshape(M, N, d, factor), factor, sub_dt)
    dW = np.ascontiguousarray(fw.transpose(0, 1, 3, 2)).reshape(M, N * factor, d)
    db_dom = _domain(KIND_B, bundle.depth_b + 1, factor)
    zb = kernels.standard_normals(bundle.b_seed, db_dom, np.array([B_STREAM], np.uint64),
                                  N * l * factor)
    fb = _bridge(bundle.dB, zb[0].reshape(N, l, factor), factor, sub_dt)
    dB = np.ascontiguousarray(fb.transpose(0, 2, 1)).reshape(N * factor, l)
    return BrownianBundle(fine, dW, dB, bundle.seed, bundle.b_seed, bundle.stream_ids,
                          bundle.depth_w + 1, bundle.depth_b + 1)


def coarsen_bundle(bundle, factor):
    """Sum groups of ``factor`` increments (the restriction to a coarser grid)."""
    g = bundle.grid
    if g.N % factor:
        raise ValueError(f"N={g.N} is not divisible by {factor}")
    n = g.N // factor
    dW = bundle.dW.reshape(bundle.M, n, factor, bundle.d).sum(axis=2)
    dB = bundle.dB.reshape(n, factor, bundle.l).sum(axis=1)
    return BrownianBundle(TimeGrid(g.t0, g.T, n), dW, dB, bundle.seed, bundle.b_seed,
                          bundle.stream_ids, bundle.depth_w, bundle.depth_b)


class BackwardBFunctional:
    """Node values of the backward integral of ``phi dB`` from each node to T."""

    def __init__(self, phi, values, left=False):
        self.phi = phi
        self.values = values
        self.left = left

    def __getitem__(self, i):
        return self.values[i]

    def restrict(self, i0):
        return BackwardBFunctional(self.phi, self.values[i0:], self.left)


def _phi_nodes(phi, grid, l):  # noqa: E741
    vals = np.empty((grid.N + 1, l))
    for i, t in enumerate(grid.nodes):
        vals[i] = np.broadcast_to(np.asarray(phi(t), dtype=np.float64), (l,))
    return vals


def backward_B(phi, bundle, left=False):
    """Backward functional ``values[i] = sum_{j>=i} phi(tau_{j+1}) . dB_j``.

    ``left=True`` evaluates ``phi`` at the left endpoint instead (kept only for
    sensitivity checks of the quadrature convention).
    """
    g = bundle.grid
    ph = _phi_nodes(phi, g, bundle.l)
    w = ph[:-1] if left else ph[1:]
    terms = w * bundle.dB
    values = np.zeros((g.N + 1, bundle.l))
    for i in range(g.N - 1, -1, -1):
        values[i] = values[i + 1] + terms[i]
    return BackwardBFunctional(phi, values, left=left)


def _ito_sum(integrand, dB, i0, i1, offset):
    integrand = np.asarray(integrand, dtype=np.float64)
    n = dB.shape[0]
    if not (0 <= i0 <= i1 <= n):
        raise IndexError(f"quadrature range [{i0}, {i1}] outside [0, {n}]")
    if integrand.shape[0] != n + 1:
        raise ValueError(f"integrand needs {n + 1} node values, got {integrand.shape[0]}")
    vals = integrand[i0 + offset:i1 + offset]
    inc = dB[i0:i1]
    return np.einsum("n...kl,nl->...k", vals, inc)


def backward_ito_sum(integrand, bundle, i0, i1):
    """Right-endpoint sum ``sum_{j=i0}^{i1-1} integrand[j+1] @ dB_j``.

    ``integrand`` holds node values of shape ``(N+1, ..., k, l)``.
    """
    return _ito_sum(integrand, bundle.dB, i0, i1, 1)


def forward_ito_sum(integrand, bundle, i0, i1):
    """Left-endpoint counterpart of :func:`backward_ito_sum`."""
    return _ito_sum(integrand, bundle.dB, i0, i1, 0)


_MAGIC = b"BDSFKPTH"
_VERSION = 1
_HEADER = struct.Struct("<8sQQQqqqqdd")


def dump_paths(bundle, path):
    """Write the binary path dump (little-endian header + dW + dB as float64)."""
    g = bundle.grid
    header = _HEADER.pack(_MAGIC, _VERSION, bundle.seed, bundle.b_seed,
                          g.N, bundle.M, bundle.d, bundle.l, g.t0, g.T)
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(np.ascontiguousarray(bundle.dW, dtype="<f8").tobytes())
        fh.write(np.ascontiguousarray(bundle.dB, dtype="<f8").tobytes())


def load_paths(path):
    """Read a bundle written by :func:`dump_paths`."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < _HEADER.size:
        raise ValueError(f"{path}: truncated header")
    magic, version, seed, b_seed, N, M, d, l, t0, T = _HEADER.unpack_from(raw)  # noqa: E741
    if magic != _MAGIC:
        raise ValueError(f"{path}: bad magic {magic!r}")
    if version != _VERSION:
        raise ValueError(f"{path}: unsupported version {version}")
    n_w = M * N * d
    n_b = N * l
    body = np.frombuffer(raw, dtype="<f8", offset=_HEADER.size)
    if body.size != n_w + n_b:
        raise ValueError(f"{path}: expected {n_w + n_b} floats, found {body.size}")
    dW = body[:n_w].reshape(M, N, d).astype(np.float64)
    dB = body[n_w:].reshape(N, l).astype(np.float64)
    return BrownianBundle(TimeGrid(t0, T, N), dW, dB, seed, b_seed,
                          np.arange(M, dtype=np.uint64))
