"""Pure numpy/scipy implementations of the hot kernels.

Used when the compiled extension is unavailable or when
``BDSFK_BACKEND=python`` is set.
"""
import numpy as np
from scipy.linalg import solve_banded

_M0 = np.uint64(0xD2511F53)
_M1 = np.uint64(0xCD9E8D57)
_W0 = 0x9E3779B9
_W1 = 0xBB67AE85
_MASK32 = np.uint64(0xFFFFFFFF)
_SHIFT32 = np.uint64(32)
_TWO_M53 = 1.0 / 9007199254740992.0


def philox_uniforms(seed, domain, streams, block0, n_blocks):
    """Uniforms in (0, 1), shape ``(len(streams), 2 * n_blocks)``."""
    seed = int(seed) & 0xFFFFFFFFFFFFFFFF
    streams = np.asarray(streams, dtype=np.uint64)
    ns = streams.shape[0]
    blocks = (np.arange(block0, block0 + n_blocks, dtype=np.uint64) & _MASK32)

    c0 = np.broadcast_to(blocks[None, :], (ns, n_blocks)).copy()
    c1 = np.full((ns, n_blocks), np.uint64(domain) & _MASK32, dtype=np.uint64)
    c2 = np.broadcast_to((streams & _MASK32)[:, None], (ns, n_blocks)).copy()
    c3 = np.broadcast_to((streams >> _SHIFT32)[:, None], (ns, n_blocks)).copy()
    c0, c1, c2, c3 = philox4x32(c0, c1, c2, c3, seed & 0xFFFFFFFF, seed >> 32)

    w0 = c0 | (c1 << _SHIFT32)
    w1 = c2 | (c3 << _SHIFT32)
    out = np.empty((ns, 2 * n_blocks), dtype=np.float64)
    out[:, 0::2] = ((w0 >> np.uint64(11)).astype(np.float64) + 0.5) * _TWO_M53
    out[:, 1::2] = ((w1 >> np.uint64(11)).astype(np.float64) + 0.5) * _TWO_M53
    return out


def philox4x32(c0, c1, c2, c3, k0, k1):
    """Philox4x32-10 rounds on uint64 arrays holding 32-bit words."""
    for _ in range(10):
        p0 = _M0 * c0
        p1 = _M1 * c2
        n0 = (p1 >> _SHIFT32) ^ c1 ^ np.uint64(k0)
        n2 = (p0 >> _SHIFT32) ^ c3 ^ np.uint64(k1)
        c1 = p1 & _MASK32
        c3 = p0 & _MASK32
        c0 = n0
        c2 = n2
        k0 = (k0 + _W0) & 0xFFFFFFFF
        k1 = (k1 + _W1) & 0xFFFFFFFF
    return c0, c1, c2, c3


def thomas_solve(lower, diag, upper, rhs):
    """Solve a tridiagonal system; ``lower``/``upper`` have length ``n - 1``."""
    n = diag.shape[0]
    ab = np.zeros((3, n))
    ab[0, 1:] = upper
    ab[1] = diag
    ab[2, :-1] = lower
    return solve_banded((1, 1), ab, rhs)
