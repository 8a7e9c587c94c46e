"""Self-convergence study that fixes the finite-resolution constant C_FD per preset.

For each preset and B seed, a fine bundle (N_ref steps) is generated once and
coarsened, so every level sees the same W and B paths. At each level
(N, J) with ``dx^2`` coupled to ``dt``:

* the field error is ``|u_{N,J} - u_ref|`` against the finest field;
* the BDSDE time bias is estimated by ``|Y_N - Y_{2N}|`` on coupled paths
  (the Richardson estimate of a first-order bias).

C_FD is 1.5 times the largest ratio of their sum to ``dt + dx^2``, rounded up
to one significant digit. Run: ``python3 scripts/calibrate_cfd.py [preset ...]``.
"""
import json
import sys

import numpy as np

from bdsfk.bdsde import solve_bdsde
from bdsfk.forward import solve_forward
from bdsfk.paths import TimeGrid, backward_B, coarsen_bundle, gen_bundle
from bdsfk.presets import PRESETS, make_preset
from bdsfk.spde import SpaceGrid, solve_spde

LEVELS = [(50, 100), (100, 141), (200, 200)]
N_REF, J_REF = 1600, 800
M = 20000
PROBES = [-1.0, 0.0, 1.0]
B_SEEDS = [11, 12, 13]


def calibrate(name):
    coeffs = make_preset(name)
    worst = 0.0
    rows = []
    for b_seed in B_SEEDS:
        fine = gen_bundle(101, TimeGrid(0.0, 1.0, N_REF), M, 1, 1, b_seed=b_seed)
        ref = solve_spde(coeffs, fine, backward_B(coeffs.phi, fine), SpaceGrid(-6.0, 6.0, J_REF),
                         "theta_implicit")
        u_ref = ref.value(0, PROBES)
        for N, J in LEVELS:
            space = SpaceGrid(-6.0, 6.0, J)
            b1 = coarsen_bundle(fine, N_REF // N)
            b2 = coarsen_bundle(fine, N_REF // (2 * N))
            field = solve_spde(coeffs, b1, backward_B(coeffs.phi, b1), space, "theta_implicit")
            e_fd = np.abs(field.value(0, PROBES) - u_ref)
            e_bs = []
            for x in PROBES:
                y1 = solve_bdsde(coeffs, solve_forward(coeffs, [x], b1, flow=False), b1,
                                 backward_B(coeffs.phi, b1)).y0[0]
                y2 = solve_bdsde(coeffs, solve_forward(coeffs, [x], b2, flow=False), b2,
                                 backward_B(coeffs.phi, b2)).y0[0]
                e_bs.append(abs(y1 - y2))
            h = b1.grid.dt + space.dx ** 2
            ratio = float(np.max((e_fd + np.array(e_bs)) / h))
            worst = max(worst, ratio)
            rows.append({"b_seed": b_seed, "N": N, "J": J, "fd_error": e_fd.tolist(),
                         "bdsde_bias": e_bs, "ratio": ratio})
    raw = 1.5 * worst
    mag = 10 ** np.floor(np.log10(raw)) if raw > 0 else 1.0
    c_fd = float(f"{np.ceil(raw / mag) * mag:.1g}") if raw > 0 else 0.1
    return {"preset": name, "c_fd": c_fd, "worst_ratio": worst, "rows": rows}


if __name__ == "__main__":
    names = sys.argv[1:] or sorted(PRESETS)
    for name in names:
        out = calibrate(name)
        print(json.dumps({k: out[k] for k in ("preset", "c_fd", "worst_ratio")}))
        for r in out["rows"]:
            print("   ", json.dumps(r))
