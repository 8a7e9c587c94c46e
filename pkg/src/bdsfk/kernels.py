"""Backend selection for the hot kernels.

The compiled extension ``bdsfk._ckernels`` is used when importable; set
``BDSFK_BACKEND=python`` to force the numpy fallback.
"""
import os
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from . import _pykernels

BACKEND = "python"
_impl = _pykernels
if os.environ.get("BDSFK_BACKEND", "auto").lower() != "python":
    try:
        from . import _ckernels as _impl  # noqa: F811

        BACKEND = "cython"
    except ImportError:
        _impl = _pykernels

# streams per work item; a fixed chunking keeps results independent of thread count
STREAM_CHUNK = 4096


def get_impl(name=None):
    """Return the kernel module for ``name`` ("cython", "python") or the active one."""
    if name is None:
        return _impl
    if name == "python":
        return _pykernels
    if name == "cython":
        from . import _ckernels

        return _ckernels
    raise ValueError(f"unknown backend {name!r}")


def philox_uniforms(seed, domain, streams, block0, n_blocks, threads=1, impl=None):
    impl = impl or _impl
    streams = np.ascontiguousarray(streams, dtype=np.uint64)
    if threads <= 1 or streams.shape[0] <= STREAM_CHUNK:
        return impl.philox_uniforms(seed, domain, streams, block0, n_blocks)
    chunks = [streams[i:i + STREAM_CHUNK] for i in range(0, streams.shape[0], STREAM_CHUNK)]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        parts = list(pool.map(
            lambda s: impl.philox_uniforms(seed, domain, s, block0, n_blocks), chunks))
    return np.concatenate(parts, axis=0)


def standard_normals(seed, domain, streams, count, threads=1, impl=None):
    """``count`` N(0,1) draws per stream via Box-Muller on Philox uniforms.

    The Box-Muller transform runs in numpy for every backend, so normals are
    bit-identical across backends and thread counts.
    """
    n_blocks = (count + 1) // 2
    u = philox_uniforms(seed, domain, streams, 0, n_blocks, threads=threads, impl=impl)
    u1 = u[:, 0::2]
    u2 = u[:, 1::2]
    r = np.sqrt(-2.0 * np.log(u1))
    ang = 2.0 * np.pi * u2
    z = np.empty_like(u)
    z[:, 0::2] = r * np.cos(ang)
    z[:, 1::2] = r * np.sin(ang)
    return z[:, :count]


def thomas_solve(lower, diag, upper, rhs, impl=None):
    impl = impl or _impl
    return impl.thomas_solve(
        np.ascontiguousarray(lower, dtype=np.float64),
        np.ascontiguousarray(diag, dtype=np.float64),
        np.ascontiguousarray(upper, dtype=np.float64),
        np.ascontiguousarray(rhs, dtype=np.float64),
    )
