# cython: language_level=3
"""Compiled hot kernels: Philox4x32-10 counter-based uniforms and a Thomas solver.

Both functions mirror ``bdsfk._pykernels`` exactly in their contracts; the
uniform stream is bit-identical between the two implementations.
"""
import numpy as np
cimport numpy as cnp
from libc.stdint cimport uint32_t, uint64_t

cnp.import_array()

cdef uint32_t PHILOX_M0 = 0xD2511F53u
cdef uint32_t PHILOX_M1 = 0xCD9E8D57u
cdef uint32_t PHILOX_W0 = 0x9E3779B9u
cdef uint32_t PHILOX_W1 = 0xBB67AE85u
cdef double TWO_M53 = 1.0 / 9007199254740992.0


cdef inline void _philox(uint32_t* ctr, uint32_t k0, uint32_t k1) noexcept nogil:
    cdef uint64_t p0, p1
    cdef uint32_t hi0, lo0, hi1, lo1
    cdef int r
    for r in range(10):
        p0 = <uint64_t>PHILOX_M0 * <uint64_t>ctr[0]
        p1 = <uint64_t>PHILOX_M1 * <uint64_t>ctr[2]
        hi0 = <uint32_t>(p0 >> 32)
        lo0 = <uint32_t>p0
        hi1 = <uint32_t>(p1 >> 32)
        lo1 = <uint32_t>p1
        ctr[0] = hi1 ^ ctr[1] ^ k0
        ctr[1] = lo1
        ctr[2] = hi0 ^ ctr[3] ^ k1
        ctr[3] = lo0
        k0 = k0 + PHILOX_W0
        k1 = k1 + PHILOX_W1


def philox_uniforms(uint64_t seed, uint32_t domain,
                    cnp.uint64_t[::1] streams, Py_ssize_t block0, Py_ssize_t n_blocks):
    """Uniforms in (0, 1), shape ``(len(streams), 2 * n_blocks)``.

    Row ``r`` holds blocks ``block0 .. block0 + n_blocks - 1`` of stream
    ``streams[r]``; each block yields two 53-bit uniforms.
    """
    cdef Py_ssize_t ns = streams.shape[0]
    out = np.empty((ns, 2 * n_blocks), dtype=np.float64)
    cdef double[:, ::1] o = out
    cdef uint32_t k0 = <uint32_t>seed
    cdef uint32_t k1 = <uint32_t>(seed >> 32)
    cdef uint32_t ctr[4]
    cdef Py_ssize_t r, b
    cdef uint64_t s, w0, w1
    with nogil:
        for r in range(ns):
            s = streams[r]
            for b in range(n_blocks):
                ctr[0] = <uint32_t>(block0 + b)
                ctr[1] = domain
                ctr[2] = <uint32_t>s
                ctr[3] = <uint32_t>(s >> 32)
                _philox(ctr, k0, k1)
                w0 = <uint64_t>ctr[0] | (<uint64_t>ctr[1] << 32)
                w1 = <uint64_t>ctr[2] | (<uint64_t>ctr[3] << 32)
                o[r, 2 * b] = (<double>(w0 >> 11) + 0.5) * TWO_M53
                o[r, 2 * b + 1] = (<double>(w1 >> 11) + 0.5) * TWO_M53
    return out


def thomas_solve(double[::1] lower, double[::1] diag, double[::1] upper, double[::1] rhs):
    """Solve a tridiagonal system; ``lower``/``upper`` have length ``n - 1``."""
    cdef Py_ssize_t n = diag.shape[0]
    cdef Py_ssize_t i
    cdef double m
    cp_arr = np.empty(n, dtype=np.float64)
    x_arr = np.empty(n, dtype=np.float64)
    cdef double[::1] cp = cp_arr
    cdef double[::1] x = x_arr
    with nogil:
        if n == 1:
            x[0] = rhs[0] / diag[0]
        else:
            cp[0] = upper[0] / diag[0]
            x[0] = rhs[0] / diag[0]
            for i in range(1, n):
                m = diag[i] - lower[i - 1] * cp[i - 1]
                if i < n - 1:
                    cp[i] = upper[i] / m
                x[i] = (rhs[i] - lower[i - 1] * x[i - 1]) / m
            for i in range(n - 2, -1, -1):
                x[i] = x[i] - cp[i] * x[i + 1]
    return x_arr
