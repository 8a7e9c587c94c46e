"""Cross-validation of the Monte Carlo BDSDE solver against the pathwise SPDE field.

Both solvers consume exactly one realization of the backward driver. Each
probe ``(t, x)`` is checked against the budget::

    |u(t, x) - Y_t^{t,x}| <= 3 SE_MC + c_fd (dt + dx^2)
"""
import csv
import io
import json
import math
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from .bdsde import solve_bdsde
from .forward import solve_forward
from .paths import backward_B, gen_bundle, refine_bundle
from .spde import solve_spde

__all__ = [
    "fk_compare",
    "convergence_study",
    "empirical_order",
    "build_bundle",
    "check_bundle",
    "report_json",
    "report_csv",
    "SE_MULTIPLIER",
]

SE_MULTIPLIER = 3.0
# nodes of the field comparison: the mid node of each probe's horizon, on a
# grid spanning the central part of the forward-path distribution there
_FIELD_POINTS = 41
_FIELD_QUANTILES = (0.05, 0.95)


def _map(fn, items, threads):
    items = list(items)
    if threads <= 1 or len(items) <= 1:
        return [fn(it) for it in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


def build_bundle(scenario, threads=1):
    """W paths from ``seeds.w`` and the single B path from ``seeds.b``."""
    d, _, l = scenario.dims  # noqa: E741
    return gen_bundle(scenario.w_seed, scenario.grid, scenario.M, d, l,
                      b_seed=scenario.b_seed, threads=threads)


def check_bundle(scenario, bundle):
    """Raise ``ValueError`` if a loaded bundle does not fit the scenario."""
    g = scenario.grid
    d, _, l = scenario.dims  # noqa: E741
    have = (bundle.grid.N, bundle.grid.t0, bundle.grid.T, bundle.M, bundle.d, bundle.l)
    want = (g.N, g.t0, g.T, scenario.M, d, l)
    names = ("N", "t0", "T", "M", "d", "l")
    for n, h, w in zip(names, have, want):
        if h != w:
            raise ValueError(f"path file has {n}={h} but the scenario needs {n}={w}")


def _field_diffs(sol, field, i0, coeffs):
    """RMS/max differences of ``u`` vs the regressed Y field and ``u_x sigma`` vs Z at the mid node."""
    n_sub = sol.grid.N
    j = n_sub // 2
    if j == 0:
        return None
    Xj = sol.forward.X[:, j, 0]
    lo, hi = np.quantile(Xj, _FIELD_QUANTILES)
    if not hi > lo:
        return None
    xs = np.linspace(lo, hi, _FIELD_POINTS)
    node = i0 + j
    u = field.value(node, xs)
    uz = field.derivative(node, xs) * coeffs.sigma(xs[:, None])[:, 0, 0]
    y = sol.y_at(j, xs[:, None])[:, 0]
    z = sol.z_at(j, xs[:, None])[:, 0, 0]
    return {
        "node": int(node),
        "x_range": [float(lo), float(hi)],
        "u_vs_y_rms": float(np.sqrt(np.mean((u - y) ** 2))),
        "u_vs_y_max": float(np.max(np.abs(u - y))),
        "grad_vs_z_rms": float(np.sqrt(np.mean((uz - z) ** 2))),
        "grad_vs_z_max": float(np.max(np.abs(uz - z))),
    }


def _probe(args):
    scenario, coeffs, bundle, bback, field, t, x = args
    grid = bundle.grid
    i0 = grid.index_of(t)
    sub = bundle.restrict(i0) if i0 else bundle
    bsub = bback.restrict(i0) if i0 else bback
    fw = solve_forward(coeffs, [x], sub, flow=False)
    sol = solve_bdsde(coeffs, fw, sub, bsub, scenario.regression, scenario.options)
    u = float(field.value(i0, x))
    y = float(sol.y0[0])
    se = float(sol.se_y0[0])
    fd = scenario.c_fd * (grid.dt + field.space.dx ** 2)
    budget = SE_MULTIPLIER * se + fd
    diff = abs(u - y)
    sig = float(coeffs.sigma(np.array([[x]]))[0, 0, 0])
    grad_u_sigma = float(field.derivative(i0, x)) * sig
    z = float(sol.z0[0, 0])
    se_z = float(sol.se_z0[0, 0])
    return {
        "t": t,
        "x": x,
        "node": i0,
        "u_spde": u,
        "y_bdsde": y,
        "abs_diff": diff,
        "se_mc": se,
        "fd_budget": fd,
        "budget": budget,
        "pass": bool(diff <= budget),
        "grad_u_sigma": grad_u_sigma,
        "z_bdsde": z,
        "z_abs_diff": abs(grad_u_sigma - z),
        "z_se_mc": se_z,
        "z_fd_budget": fd,
        "field": _field_diffs(sol, field, i0, coeffs),
        "regression_warnings": len(sol.diagnostics["warnings"]),
    }


def fk_compare(scenario, bundle=None, threads=1):
    """Solve the SPDE on one B path and the BDSDE from every probe on the same path.

    Returns a JSON-ready report dictionary; the numbers depend only on the
    scenario and seeds (not on ``threads``).
    """
    coeffs = scenario.coefficients()
    if coeffs.d != 1 or coeffs.k != 1:
        raise ValueError(f"fk_compare needs d=k=1, scenario has dims {scenario.dims}")
    if bundle is None:
        bundle = build_bundle(scenario, threads)
    bback = backward_B(coeffs.phi, bundle)
    field = solve_spde(coeffs, bundle, bback, scenario.space, scenario.scheme)
    args = [(scenario, coeffs, bundle, bback, field, t, x) for t, x in scenario.probes]
    probes = _map(_probe, args, threads)
    return {
        "scenario": scenario.id,
        "preset": scenario.family,
        "params": dict(sorted(scenario.params.items())),
        "seeds": {"w": scenario.w_seed, "b": bundle.b_seed},
        "numerics": {
            "N": bundle.grid.N,
            "M": bundle.M,
            "J": scenario.space.J,
            "dt": bundle.grid.dt,
            "dx": scenario.space.dx,
            "scheme": scenario.scheme,
            "picard_inner": scenario.picard_inner,
            "basis": scenario.regression.basis_kind,
            "degree": scenario.regression.degree,
        },
        "domain": [scenario.space.x_min, scenario.space.x_max],
        "c_fd": scenario.c_fd,
        "se_multiplier": SE_MULTIPLIER,
        "probes": probes,
        "max_abs_diff": max(p["abs_diff"] for p in probes),
        "max_budget": max(p["budget"] for p in probes),
        "pass": all(p["pass"] for p in probes),
    }


def empirical_order(h, err):
    """Least-squares slope of ``log err`` against ``log h``; ``None`` if undefined."""
    h = np.asarray(h, dtype=np.float64)
    err = np.asarray(err, dtype=np.float64)
    if h.size < 2 or np.unique(h).size < 2 or not (err > 0).all():
        return None
    return float(np.polyfit(np.log(h), np.log(err), 1)[0])


def convergence_study(scenario, sweep=None, threads=1):
    """Repeat :func:`fk_compare` along a refinement sweep on coupled paths.

    Every level is obtained from one coarsest bundle (``N[0]`` steps, ``max M``
    paths) by Brownian-bridge refinement, so a coarse path is exactly the
    restriction of a fine one; a level with fewer paths uses a prefix of them.
    """
    sweep = sweep or scenario.sweep
    if not sweep:
        raise ValueError("convergence_study needs a sweep (scenario [sweep] table)")
    Ns, Ms, Js = sweep["N"], sweep["M"], sweep["J"]
    if not len(Ns) == len(Ms) == len(Js):
        raise ValueError("sweep lists must have equal length")
    base_sc = scenario.replace(N=Ns[0], M=max(Ms))
    base = build_bundle(base_sc, threads)

    def cell(idx):
        N, M, J = Ns[idx], Ms[idx], Js[idx]
        bundle = refine_bundle(base, N // Ns[0]).take(M)
        sc = scenario.replace(N=N, M=M, space=type(scenario.space)(scenario.space.x_min,
                                                                      scenario.space.x_max, J))
        rep = fk_compare(sc, bundle=bundle, threads=1)
        return {
            "N": N,
            "M": M,
            "J": J,
            "dt": rep["numerics"]["dt"],
            "dx": rep["numerics"]["dx"],
            "max_abs_diff": rep["max_abs_diff"],
            "max_se_mc": max(p["se_mc"] for p in rep["probes"]),
            "max_budget": rep["max_budget"],
            "pass": rep["pass"],
            "probes": rep["probes"],
        }

    rows = _map(cell, range(len(Ns)), threads)
    orders = {}
    for key, param in (("dt", "dt"), ("dx", "dx"), ("M", "M")):
        vals = [r[param] for r in rows]
        if len(set(vals)) < 2:
            continue
        sign = -1.0 if key == "M" else 1.0
        o_err = empirical_order(vals, [r["max_abs_diff"] for r in rows])
        o_bud = empirical_order(vals, [r["max_budget"] for r in rows])
        orders[key] = {
            "error": None if o_err is None else sign * o_err,
            "budget": None if o_bud is None else sign * o_bud,
        }
    min_order = sweep.get("min_order")
    gate_order = True
    if min_order is not None and "dt" in orders:
        o = orders["dt"]["budget"]
        gate_order = o is not None and o >= min_order
    return {
        "scenario": scenario.id,
        "preset": scenario.family,
        "seeds": {"w": scenario.w_seed, "b": scenario.b_seed},
        "c_fd": scenario.c_fd,
        "rows": rows,
        "orders": orders,
        "min_order": min_order,
        "pass": all(r["pass"] for r in rows) and gate_order,
    }


def _clean(obj):
    if isinstance(obj, dict):
        return {k: _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else None
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    return obj


def report_json(report):
    """Canonical JSON text (sorted keys, repr floats) so equal reports are equal bytes."""
    return json.dumps(_clean(report), sort_keys=True, indent=2) + "\n"


def _flatten(prefix, obj, out):
    if isinstance(obj, dict):
        for k in sorted(obj):
            _flatten(f"{prefix}.{k}" if prefix else k, obj[k], out)
    elif isinstance(obj, list):
        out[prefix] = json.dumps(obj)
    else:
        out[prefix] = obj


def report_csv(rows):
    """CSV text for a list of flat-ish row dictionaries (nested values dotted)."""
    flat = []
    for r in rows:
        out = {}
        _flatten("", _clean(r), out)
        flat.append(out)
    cols = []
    for r in flat:
        for k in r:
            if k not in cols:
                cols.append(k)
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=cols, lineterminator="\n")
    w.writeheader()
    for r in flat:
        w.writerow({k: ("" if r.get(k) is None else repr(r[k]) if isinstance(r.get(k), float)
                        else r.get(k)) for k in cols})
    return buf.getvalue()
