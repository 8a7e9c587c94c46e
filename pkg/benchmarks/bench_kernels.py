"""Compare the compiled and numpy kernel backends.

Usage::

    python benchmarks/bench_kernels.py [--repeat 5]

Prints the best wall time per kernel and backend, the speedup, and whether the
two backends agree (bit-identical uniforms, Thomas solves to rounding).
"""
import argparse
import time

import numpy as np

from bdsfk.kernels import get_impl, philox_uniforms, thomas_solve


def _best(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t0)
    return min(times), out


def _tridiagonal(n, rng):
    diag = 2.5 + rng.random(n)
    lower = -rng.random(n - 1)
    upper = -rng.random(n - 1)
    return lower, diag, upper, rng.standard_normal(n)


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=5)
    args = parser.parse_args(argv)
    try:
        backends = {"python": get_impl("python"), "cython": get_impl("cython")}
    except ImportError:
        print("compiled backend not built; only the numpy fallback is available")
        return 1
    streams = np.arange(20000, dtype=np.uint64)
    rng = np.random.default_rng(0)
    system = _tridiagonal(400, rng)
    cases = {
        "philox uniforms (20000 streams x 200 blocks)":
            lambda impl: philox_uniforms(42, 1, streams, 0, 200, impl=impl),
        "thomas solve (n=400, 200 solves)":
            lambda impl: [thomas_solve(*system, impl=impl) for _ in range(200)][-1],
    }
    for name, case in cases.items():
        results = {b: _best(lambda: case(impl), args.repeat) for b, impl in backends.items()}
        (tp, op), (tc, oc) = results["python"], results["cython"]
        same = np.array_equal(op, oc) if name.startswith("philox") else np.allclose(op, oc, rtol=1e-12)
        print(f"{name}: python {tp * 1e3:.1f} ms, cython {tc * 1e3:.1f} ms, "
              f"speedup {tp / tc:.1f}x, agree {same}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
