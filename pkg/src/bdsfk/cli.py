"""Command-line entry point ``bdsfk``.

Exit codes: 0 when every gate passed, 2 when a numerical gate failed, 1 on a
usage or configuration error.
"""
import argparse
import os
import sys

import numpy as np

from .bdsde import NonFiniteSolutionError, check_assumptions, solve_bdsde
from .forward import NonFiniteStateError, solve_forward
from .harness import (build_bundle, check_bundle, convergence_study, fk_compare, report_csv,
                      report_json)
from .paths import backward_B, dump_paths, load_paths
from .presets import exact_solution
from .scenario import ScenarioError, load_scenario
from .spde import NonFiniteFieldError, dump_field, solve_spde, write_field_csv

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_GATE = 2

COMMANDS = ("simulate-sde", "solve-bdsde", "solve-spde", "compare-fk", "converge",
            "check-assumptions", "dump-paths")
_PATH_COMMANDS = ("simulate-sde", "solve-bdsde", "solve-spde", "compare-fk")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        sys.stderr.write(f"{self.prog}: error: {message}\n")
        raise SystemExit(EXIT_USAGE)


def _seed(text):
    v = int(text, 0)
    if not 0 <= v < 2 ** 64:
        raise argparse.ArgumentTypeError(f"seed must be a 64-bit unsigned integer, got {text}")
    return v


def _threads(text):
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError(f"--threads must be >= 1, got {text}")
    return v


def build_parser():
    parser = _Parser(prog="bdsfk", description="Stochastic Feynman-Kac laboratory.")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)
    sub.required = True
    helps = {
        "simulate-sde": "simulate forward paths and their tangent flow from each probe",
        "solve-bdsde": "solve the BDSDE by regression Monte Carlo from each probe",
        "solve-spde": "solve the backward SPDE pathwise on the scenario's B path",
        "compare-fk": "cross-check u(t,x) against Y_t^{t,x} on a common B path",
        "converge": "run fk comparisons along the scenario's refinement sweep",
        "check-assumptions": "estimate the Lipschitz/contraction constants of the coefficients",
        "dump-paths": "write the scenario's Brownian paths to a binary file",
    }
    for name in COMMANDS:
        p = sub.add_parser(name, help=helps[name], description=helps[name])
        p.add_argument("--scenario", required=True, metavar="FILE", help="scenario TOML file")
        p.add_argument("--seed-w", type=_seed, help="override the forward-path seed")
        p.add_argument("--seed-b", type=_seed, help="override the backward-path seed")
        p.add_argument("--out", metavar="DIR", help="write outputs into DIR instead of stdout")
        p.add_argument("--format", choices=("json", "csv"), default="json")
        p.add_argument("--threads", type=_threads, default=1)
        if name in _PATH_COMMANDS or name == "dump-paths":
            p.add_argument("--dump-paths", metavar="FILE", help="save the generated paths")
        if name in _PATH_COMMANDS:
            p.add_argument("--load-paths", metavar="FILE",
                           help="use paths from FILE instead of generating them")
    return parser


def _scenario(args):
    sc = load_scenario(args.scenario)
    changes = {}
    if args.seed_w is not None:
        changes["w_seed"] = args.seed_w
    if args.seed_b is not None:
        changes["b_seed"] = args.seed_b
    return sc.replace(**changes) if changes else sc


def _bundle(args, sc):
    if getattr(args, "load_paths", None):
        try:
            bundle = load_paths(args.load_paths)
        except OSError as exc:
            raise UsageError(f"--load-paths: {exc}") from None
        except ValueError as exc:
            raise UsageError(f"--load-paths: {exc}") from None
        try:
            check_bundle(sc, bundle)
        except ValueError as exc:
            raise UsageError(f"--load-paths: {exc}") from None
    else:
        bundle = build_bundle(sc, args.threads)
    if getattr(args, "dump_paths", None):
        dump_paths(bundle, args.dump_paths)
    return bundle


def _emit(args, name, report, rows):
    text = report_json(report) if args.format == "json" else report_csv(rows)
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        with open(os.path.join(args.out, f"{name}.{args.format}"), "w") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def _cmd_simulate_sde(args, sc):
    coeffs = sc.coefficients()
    bundle = _bundle(args, sc)
    rows = []
    ok = True
    for t, x in sc.probes:
        i0 = bundle.grid.index_of(t)
        sub = bundle.restrict(i0) if i0 else bundle
        x0 = np.full(coeffs.d, x)
        fw = solve_forward(coeffs, x0, sub, flow=True)
        XT = fw.X[:, -1]
        eye = np.eye(coeffs.d)
        resid = np.abs(fw.gradX @ fw.gradX_inv - eye)
        resid = float(np.max(resid[~fw.singular])) if (~fw.singular).any() else float("inf")
        ok &= resid <= sc.gates["inverse_flow"]
        rows.append({
            "t": t, "x": x,
            "mean_XT": XT.mean(axis=0).tolist(),
            "std_XT": XT.std(axis=0, ddof=1).tolist() if fw.M > 1 else [0.0] * coeffs.d,
            "mean_gradXT": fw.gradX[:, -1].mean(axis=0).tolist(),
            "inverse_flow_residual": resid,
            "singular_paths": int(fw.singular.sum()),
        })
    report = {"scenario": sc.id, "seeds": {"w": sc.w_seed, "b": sc.b_seed},
              "N": bundle.grid.N, "M": bundle.M, "probes": rows, "pass": bool(ok)}
    _emit(args, "simulate-sde", report, rows)
    return ok


def _cmd_solve_bdsde(args, sc):
    coeffs = sc.coefficients()
    bundle = _bundle(args, sc)
    bback = backward_B(coeffs.phi, bundle)
    rows = []
    for j, (t, x) in enumerate(sc.probes):
        i0 = bundle.grid.index_of(t)
        sub = bundle.restrict(i0) if i0 else bundle
        bsub = bback.restrict(i0) if i0 else bback
        fw = solve_forward(coeffs, np.full(coeffs.d, x), sub, flow=False)
        sol = solve_bdsde(coeffs, fw, sub, bsub, sc.regression, sc.options)
        rows.append({"t": t, "x": x, "y0": sol.y0.tolist(), "se_y0": sol.se_y0.tolist(),
                     "z0": sol.z0.tolist(), "se_z0": sol.se_z0.tolist(),
                     "regression_warnings": len(sol.diagnostics["warnings"])})
        if args.out and coeffs.d == 1 and coeffs.k == 1:
            _write_bdsde_field(os.path.join(args.out, f"bdsde_field_{j}.csv"), sol, i0)
    report = {"scenario": sc.id, "seeds": {"w": sc.w_seed, "b": sc.b_seed},
              "N": bundle.grid.N, "M": bundle.M, "probes": rows, "pass": True}
    _emit(args, "solve-bdsde", report, rows)
    return True


def _write_bdsde_field(path, sol, i0, points=21):
    os.makedirs(os.path.dirname(path), exist_ok=True)
    with open(path, "w") as fh:
        fh.write("node,x,Y,Z\n")
        for i in range(1, sol.grid.N):
            X = sol.forward.X[:, i, 0]
            lo, hi = np.quantile(X, (0.05, 0.95))
            xs = np.linspace(lo, hi, points)[:, None]
            y = sol.y_at(i, xs)[:, 0]
            z = sol.z_at(i, xs)[:, 0, 0]
            for xv, yv, zv in zip(xs[:, 0], y, z):
                fh.write(f"{i0 + i},{xv!r},{yv!r},{zv!r}\n")


def _cmd_solve_spde(args, sc):
    coeffs = sc.coefficients()
    bundle = _bundle(args, sc)
    field = solve_spde(coeffs, bundle, backward_B(coeffs.phi, bundle), sc.space, sc.scheme)
    rows = [{"t": t, "x": x, "u": float(field.at(t, x)),
             "ux": float(field.derivative(bundle.grid.index_of(t), x))} for t, x in sc.probes]
    report = {"scenario": sc.id, "seeds": {"b": sc.b_seed}, "N": bundle.grid.N,
              "J": sc.space.J, "domain": [sc.space.x_min, sc.space.x_max],
              "scheme": sc.scheme, "probes": rows}
    ok = True
    exact = exact_solution(sc.family, **sc.params)
    if exact is not None:
        x = sc.space.nodes
        # the truncation boundary is ours; judge the region away from it
        inner = np.abs(x - 0.5 * (sc.space.x_min + sc.space.x_max)) <= (sc.space.x_max - sc.space.x_min) / 6
        t = bundle.grid.nodes[:, None]
        err = float(np.max(np.abs(field.u - exact(t, x[None, :], sc.T))[:, inner]))
        report["exact_interior_max_error"] = err
        report["gate"] = sc.gates["spde_max_error"]
        ok = err <= sc.gates["spde_max_error"]
    report["pass"] = bool(ok)
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        dump_field(field, os.path.join(args.out, "field.bin"))
        if args.format == "csv":
            write_field_csv(field, os.path.join(args.out, "field.csv"))
    _emit(args, "solve-spde", report, rows)
    return ok


def _cmd_compare_fk(args, sc):
    report = fk_compare(sc, bundle=_bundle(args, sc), threads=args.threads)
    _emit(args, "compare-fk", report, report["probes"])
    return report["pass"]


def _cmd_converge(args, sc):
    if not sc.sweep:
        raise ScenarioError("sweep", "the converge command needs a [sweep] table")
    report = convergence_study(sc, threads=args.threads)
    rows = [{k: v for k, v in r.items() if k != "probes"} for r in report["rows"]]
    _emit(args, "converge", report, rows)
    return report["pass"]


def _cmd_check_assumptions(args, sc):
    rep = check_assumptions(sc.coefficients(), seed=sc.w_seed)
    rows = [{"constant": k, "value": v} for k, v in sorted(rep.items())
            if isinstance(v, (int, float)) and not isinstance(v, bool)]
    _emit(args, "check-assumptions", {"scenario": sc.id, **rep, "pass": rep["ok"]}, rows)
    return rep["ok"]


def _cmd_dump_paths(args, sc):
    target = args.dump_paths or (os.path.join(args.out, "paths.bin") if args.out else None)
    if not target:
        raise UsageError("dump-paths needs --dump-paths FILE or --out DIR")
    if args.out:
        os.makedirs(args.out, exist_ok=True)
    bundle = build_bundle(sc, args.threads)
    dump_paths(bundle, target)
    sys.stderr.write(f"wrote {bundle.M} x {bundle.grid.N} paths to {target}\n")
    return True


_HANDLERS = {
    "simulate-sde": _cmd_simulate_sde,
    "solve-bdsde": _cmd_solve_bdsde,
    "solve-spde": _cmd_solve_spde,
    "compare-fk": _cmd_compare_fk,
    "converge": _cmd_converge,
    "check-assumptions": _cmd_check_assumptions,
    "dump-paths": _cmd_dump_paths,
}


def run_cli(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else EXIT_USAGE
    try:
        sc = _scenario(args)
        ok = _HANDLERS[args.command](args, sc)
    except (ScenarioError, UsageError) as exc:
        sys.stderr.write(f"bdsfk: error: {exc}\n")
        return EXIT_USAGE
    except (NonFiniteStateError, NonFiniteSolutionError, NonFiniteFieldError) as exc:
        sys.stderr.write(f"bdsfk: numerical failure: {exc}\n")
        return EXIT_GATE
    except ValueError as exc:
        # remaining ValueErrors come from inconsistent settings (e.g. CFL, dims)
        sys.stderr.write(f"bdsfk: error: {exc}\n")
        return EXIT_USAGE
    return EXIT_OK if ok else EXIT_GATE


def main():
    sys.exit(run_cli())


if __name__ == "__main__":
    main()
