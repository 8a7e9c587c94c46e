"""Declarative scenario files (TOML) binding a coefficient preset to numerics and seeds.

Every numerical setting and both seeds are mandatory; only the preset
parameters, the budget constant ``c_fd``, the sweep and the gate tolerances
may be omitted. A minimal file::

    id = "heat"

    [coefficients]
    family = "heat-quadratic"          # preset name
    params = { sigma = 1.0 }           # optional preset parameters

    [dims]
    d = 1
    k = 1
    l = 1

    [horizon]
    t0 = 0.0
    T = 1.0

    [probes]
    points = [[0.0, 0.0], [0.0, 1.0]]  # (t, x) pairs; t must be a time node

    [seeds]
    w = 3
    b = 7

    [numerics]
    N = 50
    M = 100000
    scheme = "theta_implicit"          # or "explicit"
    picard_inner = 2

    [numerics.regression]
    basis = "polynomial"               # or "piecewise-linear"
    degree = 3
    bins = 8
    ridge = 1e-8

    [numerics.space]
    x_min = -6.0
    x_max = 6.0
    J = 200

Optional tables: ``[sweep]`` with equal-length (or length-1) lists ``N``,
``M``, ``J`` and an optional ``min_order``; ``[gates]`` with
``spde_max_error`` (default 1e-2) and ``inverse_flow`` (default 1e-8).
"""
import dataclasses
import sys
from dataclasses import dataclass, field

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .bdsde import SchemeOptions, check_assumptions
from .paths import TimeGrid
from .presets import PRESETS, make_preset, preset_defaults
from .regression import RegressionSpec
from .spde import SCHEMES, SpaceGrid

__all__ = ["ScenarioError", "Scenario", "load_scenario", "parse_scenario"]

_GATE_DEFAULTS = {"spde_max_error": 1e-2, "inverse_flow": 1e-8}


class ScenarioError(ValueError):
    """Malformed or inconsistent scenario; ``field`` names the offending key."""

    def __init__(self, field, message):
        super().__init__(f"scenario field '{field}': {message}")
        self.field = field


@dataclass(frozen=True)
class Scenario:
    id: str
    family: str
    params: dict
    dims: tuple
    t0: float
    T: float
    probes: tuple
    w_seed: int
    b_seed: int
    N: int
    M: int
    scheme: str
    picard_inner: int
    regression: RegressionSpec
    space: SpaceGrid
    c_fd: float
    sweep: dict = field(default=None)
    gates: dict = field(default_factory=lambda: dict(_GATE_DEFAULTS))

    @property
    def grid(self):
        return TimeGrid(self.t0, self.T, self.N)

    @property
    def options(self):
        return SchemeOptions(picard_inner=self.picard_inner)

    def coefficients(self):
        return make_preset(self.family, **self.params)

    def replace(self, **changes):
        return dataclasses.replace(self, **changes)


def _get(table, key, where, kind=None):
    if not isinstance(table, dict) or key not in table:
        raise ScenarioError(f"{where}{key}", "missing (mandatory)")
    value = table[key]
    if kind is not None:
        _check_kind(value, kind, f"{where}{key}")
    return value


def _check_kind(value, kind, name):
    if kind is int and (isinstance(value, bool) or not isinstance(value, int)):
        raise ScenarioError(name, f"expected an integer, got {value!r}")
    if kind is float and (isinstance(value, bool) or not isinstance(value, (int, float))):
        raise ScenarioError(name, f"expected a number, got {value!r}")
    if kind is str and not isinstance(value, str):
        raise ScenarioError(name, f"expected a string, got {value!r}")


def _table(doc, key, where=""):
    t = _get(doc, key, where)
    if not isinstance(t, dict):
        raise ScenarioError(f"{where}{key}", "expected a table")
    return t


def parse_scenario(doc, check=True):
    """Build a :class:`Scenario` from a parsed TOML document."""
    sid = _get(doc, "id", "", str)
    co = _table(doc, "coefficients")
    family = _get(co, "family", "coefficients.", str)
    if family not in PRESETS:
        raise ScenarioError("coefficients.family",
                            f"unknown preset {family!r}; known: {', '.join(sorted(PRESETS))}")
    params = co.get("params", {})
    if not isinstance(params, dict):
        raise ScenarioError("coefficients.params", "expected a table")
    for k, v in params.items():
        _check_kind(v, float, f"coefficients.params.{k}")
    try:
        coeffs = make_preset(family, **params)
    except ValueError as exc:
        raise ScenarioError("coefficients.params", str(exc)) from None

    dims_t = _table(doc, "dims")
    dims = tuple(_get(dims_t, n, "dims.", int) for n in ("d", "k", "l"))
    for n, have, want in zip(("d", "k", "l"), dims, (coeffs.d, coeffs.k, coeffs.l)):
        if have != want:
            raise ScenarioError(f"dims.{n}", f"preset {family!r} has {n}={want}, scenario says {have}")

    hz = _table(doc, "horizon")
    t0 = float(_get(hz, "t0", "horizon.", float))
    T = float(_get(hz, "T", "horizon.", float))
    if not t0 < T:
        raise ScenarioError("horizon.T", f"must exceed t0={t0}, got {T}")

    nu = _table(doc, "numerics")
    N = _get(nu, "N", "numerics.", int)
    M = _get(nu, "M", "numerics.", int)
    if N < 1:
        raise ScenarioError("numerics.N", f"must be >= 1, got {N}")
    if M < 1:
        raise ScenarioError("numerics.M", f"must be >= 1, got {M}")
    scheme = _get(nu, "scheme", "numerics.", str)
    if scheme not in SCHEMES:
        raise ScenarioError("numerics.scheme", f"expected one of {SCHEMES}, got {scheme!r}")
    picard_inner = _get(nu, "picard_inner", "numerics.", int)
    if picard_inner < 1:
        raise ScenarioError("numerics.picard_inner", f"must be >= 1, got {picard_inner}")
    rg = _table(nu, "regression", "numerics.")
    reg_args = dict(basis_kind=_get(rg, "basis", "numerics.regression.", str),
                    degree=_get(rg, "degree", "numerics.regression.", int),
                    bins=_get(rg, "bins", "numerics.regression.", int),
                    ridge=float(_get(rg, "ridge", "numerics.regression.", float)))
    try:
        regression = RegressionSpec(**reg_args)
    except ValueError as exc:
        raise ScenarioError("numerics.regression", str(exc)) from None
    sp = _table(nu, "space", "numerics.")
    space_args = (float(_get(sp, "x_min", "numerics.space.", float)),
                  float(_get(sp, "x_max", "numerics.space.", float)),
                  _get(sp, "J", "numerics.space.", int))
    try:
        space = SpaceGrid(*space_args)
    except ValueError as exc:
        raise ScenarioError("numerics.space", str(exc)) from None

    pr = _table(doc, "probes")
    pts = _get(pr, "points", "probes.")
    if not isinstance(pts, list) or not pts:
        raise ScenarioError("probes.points", "expected a non-empty list of [t, x] pairs")
    probes = []
    grid = TimeGrid(t0, T, N)
    for j, p in enumerate(pts):
        if not (isinstance(p, list) and len(p) == 2):
            raise ScenarioError(f"probes.points[{j}]", f"expected [t, x], got {p!r}")
        for v in p:
            _check_kind(v, float, f"probes.points[{j}]")
        t, x = float(p[0]), float(p[1])
        try:
            i = grid.index_of(t)
        except ValueError:
            raise ScenarioError(f"probes.points[{j}]", f"t={t} is not a node of the time grid") from None
        if i >= N:
            raise ScenarioError(f"probes.points[{j}]", "probe time must be before T")
        if not space.x_min < x < space.x_max:
            raise ScenarioError(f"probes.points[{j}]", f"x={x} outside the space grid")
        probes.append((t, x))

    sd = _table(doc, "seeds")
    w_seed = _get(sd, "w", "seeds.", int)
    b_seed = _get(sd, "b", "seeds.", int)
    for n, v in (("w", w_seed), ("b", b_seed)):
        if not 0 <= v < 2 ** 64:
            raise ScenarioError(f"seeds.{n}", f"must be a 64-bit unsigned integer, got {v}")

    c_fd = co.get("c_fd", preset_defaults(family)["c_fd"])
    _check_kind(c_fd, float, "coefficients.c_fd")
    if c_fd < 0:
        raise ScenarioError("coefficients.c_fd", f"must be >= 0, got {c_fd}")

    sweep = None
    if "sweep" in doc:
        sweep = _parse_sweep(doc["sweep"], N, M, space.J)
    gates = dict(_GATE_DEFAULTS)
    for k, v in doc.get("gates", {}).items():
        if k not in gates:
            raise ScenarioError(f"gates.{k}", f"unknown gate; known: {', '.join(sorted(gates))}")
        _check_kind(v, float, f"gates.{k}")
        gates[k] = float(v)

    unknown = set(doc) - {"id", "coefficients", "dims", "horizon", "probes", "seeds",
                          "numerics", "sweep", "gates"}
    if unknown:
        raise ScenarioError(sorted(unknown)[0], "unknown top-level key")

    sc = Scenario(sid, family, dict(params), dims, t0, T, tuple(probes), w_seed, b_seed, N, M,
                  scheme, picard_inner, regression, space, float(c_fd), sweep, gates)
    if check:
        rep = check_assumptions(coeffs)
        if not rep["ok"]:
            v = rep["violations"][0]
            raise ScenarioError("coefficients", f"declared constants violated: {v}")
    return sc


def _parse_sweep(sw, N, M, J):
    if not isinstance(sw, dict):
        raise ScenarioError("sweep", "expected a table")
    lists = {}
    for key, default in (("N", N), ("M", M), ("J", J)):
        v = sw.get(key, [default])
        if not isinstance(v, list) or not v:
            raise ScenarioError(f"sweep.{key}", "expected a non-empty list")
        for item in v:
            _check_kind(item, int, f"sweep.{key}")
            if item < 1:
                raise ScenarioError(f"sweep.{key}", f"entries must be >= 1, got {item}")
        if any(b < a for a, b in zip(v, v[1:])):
            raise ScenarioError(f"sweep.{key}", "must be non-decreasing")
        lists[key] = list(v)
    n = max(len(v) for v in lists.values())
    for key, v in lists.items():
        if len(v) not in (1, n):
            raise ScenarioError(f"sweep.{key}", f"length {len(v)} does not match the sweep length {n}")
    out = {k: v * n if len(v) == 1 else v for k, v in lists.items()}
    base = out["N"][0]
    for n_i in out["N"]:
        if n_i % base:
            raise ScenarioError("sweep.N", f"{n_i} is not a multiple of the coarsest level {base}")
    if "min_order" in sw:
        _check_kind(sw["min_order"], float, "sweep.min_order")
        out["min_order"] = float(sw["min_order"])
    extra = set(sw) - {"N", "M", "J", "min_order"}
    if extra:
        raise ScenarioError(f"sweep.{sorted(extra)[0]}", "unknown key")
    return out


def load_scenario(path, check=True):
    try:
        with open(path, "rb") as fh:
            doc = tomllib.load(fh)
    except FileNotFoundError:
        raise ScenarioError("--scenario", f"file not found: {path}") from None
    except tomllib.TOMLDecodeError as exc:
        raise ScenarioError("--scenario", f"malformed TOML in {path}: {exc}") from None
    return parse_scenario(doc, check=check)
