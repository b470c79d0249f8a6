"""Scenario files: TOML in, validated :class:`ScenarioConfig` out.

A scenario is fully parsed and checked (unknown keys, types, expression
syntax) before anything is built or simulated.  Errors name the offending
key, e.g. ``[solver].dt: must be > 0``.

Layout::

    name = "..."
    dim = 1
    box = [[-10, 10]]

    [coefficients]          # or exactly one builder block below
    F = ["-x1"]
    gamma = [["2 + sin(x1)"]]
    sigma = [["1"]]

    [fdr]                   # convention, kT, D or sigma, U or F
    [colored_noise]         # F, friction, scale, A, lam, tau0, coupling, zeta_box
    [thermophoresis]        # F, gamma, D, c, zeta_box (one dimension)
    [magnetic]              # q, B; folded into [coefficients] or [fdr]

    [solver]                # dt, T, paths, seed, scheme, x0, v0, mass, ...
    [experiment]            # masses, compare_no_drift, drift_points, stationary
"""

import sys
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from . import expr as ex
from .errors import ConfigError
from .model import (
    CoefficientModel,
    ColoredNoiseSpec,
    MagneticSpec,
    augment_magnetic,
    fdr_model,
    lift_colored_noise,
)
from .sde import SolverConfig

__all__ = ["ScenarioConfig", "load", "loads", "build_model", "solver_config"]


def _fail(where, msg):
    raise ConfigError(f"{where}: {msg}")


def _number(v, where, positive=False, nonneg=False, integer=False):
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        _fail(where, f"expected a number, got {type(v).__name__}")
    if integer and not isinstance(v, int):
        _fail(where, "expected an integer")
    if not np.isfinite(v):
        _fail(where, "must be finite")
    if positive and v <= 0:
        _fail(where, "must be > 0")
    if nonneg and v < 0:
        _fail(where, "must be >= 0")
    return v


def _vector(v, where, n=None):
    if not isinstance(v, list):
        _fail(where, "expected an array")
    if n is not None and len(v) != n:
        _fail(where, f"expected {n} entries, got {len(v)}")
    return [float(_number(c, f"{where}[{i}]")) for i, c in enumerate(v)]


def _matrix(v, where, rows=None, cols=None):
    if not isinstance(v, list) or not all(isinstance(r, list) for r in v):
        _fail(where, "expected an array of arrays")
    if rows is not None and len(v) != rows:
        _fail(where, f"expected {rows} rows, got {len(v)}")
    for i, r in enumerate(v):
        if cols is not None and len(r) != cols:
            _fail(f"{where}[{i}]", f"expected {cols} entries, got {len(r)}")
    return v


def _expr(v, where, dim):
    if isinstance(v, bool) or not isinstance(v, (str, int, float)):
        _fail(where, "expected an expression string")
    try:
        return ex.parse(str(v), dim)
    except ex.ExprSyntaxError as err:
        _fail(where, f"{err} in {v!r}")


def _expr_vector(v, where, dim, n=None):
    if not isinstance(v, list):
        _fail(where, "expected an array of expression strings")
    if n is not None and len(v) != n:
        _fail(where, f"expected {n} entries, got {len(v)}")
    return [_expr(e, f"{where}[{i}]", dim) for i, e in enumerate(v)]


def _expr_matrix(v, where, dim, rows=None, cols=None):
    _matrix(v, where, rows, cols)
    width = {len(r) for r in v}
    if len(width) > 1:
        _fail(where, "rows have different lengths")
    return [[_expr(e, f"{where}[{i}][{j}]", dim) for j, e in enumerate(r)]
            for i, r in enumerate(v)]


def _table(doc, key, where, allowed, required=()):
    t = doc.get(key)
    if t is None:
        return None
    if not isinstance(t, dict):
        _fail(where, "expected a table")
    unknown = sorted(set(t) - set(allowed))
    if unknown:
        _fail(where, f"unknown key(s) {', '.join(unknown)}; allowed: {', '.join(sorted(allowed))}")
    for r in required:
        if r not in t:
            _fail(where, f"missing required key {r!r}")
    return t


_TOP = {"name", "description", "dim", "box", "coefficients", "fdr", "colored_noise",
        "thermophoresis", "magnetic", "solver", "experiment"}
_COEF = {"F", "gamma", "sigma"}
_FDR = {"convention", "kT", "D", "sigma", "U", "F"}
_COLORED = {"F", "friction", "scale", "A", "lam", "tau0", "coupling", "zeta_box"}
_THERMO = {"F", "gamma", "D", "c", "zeta_box"}
_MAGNETIC = {"q", "B"}
_BUILDERS = ("coefficients", "fdr", "colored_noise", "thermophoresis")
_SOLVER = {"dt", "T", "paths", "seed", "scheme", "x0", "v0", "mass", "threads",
           "batch_size", "record_every", "steps_per_relaxation"}
_EXPERIMENT = {"masses", "compare_no_drift", "independent_noise", "drift_points", "stationary"}
_STATIONARY = {"burn_in", "record_dt", "T", "paths", "dt"}


@dataclass
class ScenarioConfig:
    name: str
    dim: int
    box: list
    builder: str
    blocks: dict
    solver: dict
    experiment: dict
    description: str = ""
    source: Optional[str] = None
    raw: dict = field(default_factory=dict)

    @property
    def model_dim(self):
        """Dimension of the simulated state (base + noise for colored noise)."""
        return self.dim + _extra_dims(self.builder, self.blocks)


def _extra_dims(builder, blocks):
    if builder == "colored_noise":
        return len(blocks["colored_noise"]["A"])
    if builder == "thermophoresis":
        return 1
    return 0


def loads(text, source="<string>"):
    """Parse and validate scenario TOML text."""
    try:
        doc = tomllib.loads(text)
    except tomllib.TOMLDecodeError as err:
        raise ConfigError(f"{source}: TOML syntax error: {err}") from err
    try:
        return _validate(doc, source)
    except ConfigError as err:
        raise ConfigError(f"{source}: {err}") from None


def load(path):
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as err:
        raise ConfigError(f"cannot read {path}: {err.strerror}") from err
    return loads(text, source=str(path))


def _validate(doc, source):
    unknown = sorted(set(doc) - _TOP)
    if unknown:
        _fail("top level", f"unknown key(s) {', '.join(unknown)}")
    for key in ("name", "dim", "box"):
        if key not in doc:
            _fail("top level", f"missing required key {key!r}")
    name = doc["name"]
    if not isinstance(name, str) or not name:
        _fail("name", "expected a non-empty string")
    dim = _number(doc["dim"], "dim", positive=True, integer=True)
    box = _matrix(doc["box"], "box", rows=dim, cols=2)
    box = [_vector(r, f"box[{i}]", 2) for i, r in enumerate(box)]
    for i, (lo, hi) in enumerate(box):
        if lo >= hi:
            _fail(f"box[{i}]", "needs lo < hi")

    builders = [b for b in _BUILDERS if b in doc]
    if len(builders) != 1:
        _fail("top level", "exactly one of " + ", ".join(f"[{b}]" for b in _BUILDERS)
              + " is required")
    builder = builders[0]
    blocks = {}

    if builder == "coefficients":
        t = _table(doc, "coefficients", "[coefficients]", _COEF, required=_COEF)
        blocks["coefficients"] = {
            "F": _expr_vector(t["F"], "[coefficients].F", dim, dim),
            "gamma": _expr_matrix(t["gamma"], "[coefficients].gamma", dim, dim, dim),
            "sigma": _expr_matrix(t["sigma"], "[coefficients].sigma", dim, dim),
        }
    elif builder == "fdr":
        t = _table(doc, "fdr", "[fdr]", _FDR, required=("convention", "kT"))
        conv = t["convention"]
        if conv not in ("2kT", "kT"):
            _fail("[fdr].convention", f"must be \"2kT\" or \"kT\", got {conv!r}")
        blk = {"convention": conv, "kT": _number(t["kT"], "[fdr].kT", positive=True)}
        if ("D" in t) == ("sigma" in t):
            _fail("[fdr]", "give exactly one of D or sigma")
        if ("U" in t) == ("F" in t):
            _fail("[fdr]", "give exactly one of U or F")
        if "D" in t:
            if dim != 1:
                _fail("[fdr].D", "a scalar D needs dim = 1; use sigma in higher dimension")
            blk["D"] = _expr(t["D"], "[fdr].D", dim)
        else:
            blk["sigma"] = _expr_matrix(t["sigma"], "[fdr].sigma", dim, rows=dim)
        if "U" in t:
            blk["U"] = _expr(t["U"], "[fdr].U", dim)
        else:
            blk["F"] = _expr_vector(t["F"], "[fdr].F", dim, dim)
        blocks["fdr"] = blk
    elif builder == "thermophoresis":
        if dim != 1:
            _fail("[thermophoresis]", "needs dim = 1")
        t = _table(doc, "thermophoresis", "[thermophoresis]", _THERMO,
                   required=("F", "gamma", "D", "c"))
        blocks["thermophoresis"] = {
            "F": _expr(t["F"], "[thermophoresis].F", 1),
            "gamma": _expr(t["gamma"], "[thermophoresis].gamma", 1),
            "D": _expr(t["D"], "[thermophoresis].D", 1),
            "c": _number(t["c"], "[thermophoresis].c", positive=True),
            "zeta_box": _vector(t.get("zeta_box", [-1e3, 1e3]), "[thermophoresis].zeta_box", 2),
        }
    else:
        t = _table(doc, "colored_noise", "[colored_noise]", _COLORED,
                   required=("F", "friction", "A", "lam", "tau0", "coupling"))
        A = _matrix(t["A"], "[colored_noise].A")
        k = len(A)
        A = [_vector(r, f"[colored_noise].A[{i}]", k) for i, r in enumerate(A)]
        lam = _matrix(t["lam"], "[colored_noise].lam", rows=k)
        lam = [_vector(r, f"[colored_noise].lam[{i}]") for i, r in enumerate(lam)]
        blk = {
            "F": _expr_vector(t["F"], "[colored_noise].F", dim, dim),
            "friction": _expr_matrix(t["friction"], "[colored_noise].friction", dim, dim, dim),
            "scale": _expr(t.get("scale", "1"), "[colored_noise].scale", dim),
            "A": A, "lam": lam,
            "tau0": _number(t["tau0"], "[colored_noise].tau0", positive=True),
            "coupling": _expr_matrix(t["coupling"], "[colored_noise].coupling", dim, dim, k),
            "zeta_box": _vector(t.get("zeta_box", [-1e3, 1e3]), "[colored_noise].zeta_box", 2),
        }
        blocks["colored_noise"] = blk

    if "magnetic" in doc:
        if builder in ("colored_noise", "thermophoresis"):
            _fail("[magnetic]", f"cannot be combined with [{builder}]")
        if dim != 3:
            _fail("[magnetic]", "needs dim = 3")
        t = _table(doc, "magnetic", "[magnetic]", _MAGNETIC, required=_MAGNETIC)
        blocks["magnetic"] = {"q": _number(t["q"], "[magnetic].q"),
                              "B": _expr_vector(t["B"], "[magnetic].B", 3, 3)}

    sdim = dim + _extra_dims(builder, blocks)
    t = _table(doc, "solver", "[solver]", _SOLVER) or {}
    solver = {
        "dt": _number(t.get("dt", 1e-3), "[solver].dt", positive=True),
        "T": _number(t.get("T", 1.0), "[solver].T", positive=True),
        "paths": _number(t.get("paths", 100), "[solver].paths", positive=True, integer=True),
        "seed": _number(t.get("seed", 0), "[solver].seed", nonneg=True, integer=True),
        "scheme": t.get("scheme", "splitting"),
        "x0": t.get("x0"),
        "v0": t.get("v0"),
        "mass": t.get("mass"),
        "threads": _number(t.get("threads", 1), "[solver].threads", positive=True, integer=True),
        "batch_size": _number(t.get("batch_size", 256), "[solver].batch_size", positive=True,
                              integer=True),
        "record_every": _number(t.get("record_every", 1), "[solver].record_every",
                                positive=True, integer=True),
        "steps_per_relaxation": _number(t.get("steps_per_relaxation", 4),
                                        "[solver].steps_per_relaxation", positive=True),
    }
    if solver["scheme"] not in ("splitting", "euler"):
        _fail("[solver].scheme", f"must be \"splitting\" or \"euler\", got {solver['scheme']!r}")
    n = solver["T"] / solver["dt"]
    if abs(n - round(n)) > 1e-9 * n:
        _fail("[solver]", f"T / dt must be an integer (got {n:g})")
    if solver["x0"] is None:
        solver["x0"] = [0.5 * (lo + hi) for lo, hi in box]
    solver["x0"] = _vector(solver["x0"], "[solver].x0")
    if len(solver["x0"]) not in (dim, sdim):
        _fail("[solver].x0", f"expected {dim} entries")
    if solver["v0"] is not None:
        solver["v0"] = _vector(solver["v0"], "[solver].v0")
        if len(solver["v0"]) not in (dim, sdim):
            _fail("[solver].v0", f"expected {dim} entries")
    if solver["mass"] is not None:
        solver["mass"] = _number(solver["mass"], "[solver].mass", positive=True)
    for i, (c, (lo, hi)) in enumerate(zip(solver["x0"], box)):
        if not lo <= c <= hi:
            _fail(f"[solver].x0[{i}]", f"{c} lies outside the box [{lo}, {hi}]")

    t = _table(doc, "experiment", "[experiment]", _EXPERIMENT) or {}
    experiment = {}
    if "masses" in t:
        masses = _vector(t["masses"], "[experiment].masses")
        if not masses or any(m <= 0 for m in masses):
            _fail("[experiment].masses", "must be a non-empty list of positive numbers")
        if any(b >= a for a, b in zip(masses, masses[1:])):
            _fail("[experiment].masses", "must be strictly decreasing")
        experiment["masses"] = masses
    for flag in ("compare_no_drift", "independent_noise"):
        if flag in t:
            if not isinstance(t[flag], bool):
                _fail(f"[experiment].{flag}", "expected true or false")
            experiment[flag] = t[flag]
    if "drift_points" in t:
        pts = _matrix(t["drift_points"], "[experiment].drift_points", cols=dim)
        experiment["drift_points"] = [_vector(p, f"[experiment].drift_points[{i}]", dim)
                                      for i, p in enumerate(pts)]
    if "stationary" in t:
        if builder != "fdr":
            _fail("[experiment].stationary", "needs an [fdr] model")
        if "U" not in blocks["fdr"]:
            _fail("[experiment].stationary", "needs the potential U in [fdr]")
        st = _table(t, "stationary", "[experiment.stationary]", _STATIONARY) or {}
        stat = {
            "burn_in": _number(st.get("burn_in", 0.1), "[experiment.stationary].burn_in",
                               nonneg=True),
            "record_dt": _number(st.get("record_dt", 1.0), "[experiment.stationary].record_dt",
                                 positive=True),
        }
        for key in ("T", "dt"):
            if key in st:
                stat[key] = _number(st[key], f"[experiment.stationary].{key}", positive=True)
        if "paths" in st:
            stat["paths"] = _number(st["paths"], "[experiment.stationary].paths",
                                    positive=True, integer=True)
        if stat["burn_in"] >= 1:
            _fail("[experiment.stationary].burn_in", "is a fraction of T and must be < 1")
        experiment["stationary"] = stat

    return ScenarioConfig(name=name, dim=dim, box=box, builder=builder, blocks=blocks,
                          solver=solver, experiment=experiment,
                          description=str(doc.get("description", "")), source=source, raw=doc)


def build_model(cfg):
    """Construct the :class:`CoefficientModel` described by a scenario."""
    b = cfg.blocks
    if cfg.builder == "coefficients":
        c = b["coefficients"]
        model = CoefficientModel.from_expressions(cfg.dim, c["F"], c["gamma"], c["sigma"],
                                                  cfg.box, name=cfg.name)
    elif cfg.builder == "fdr":
        f = b["fdr"]
        model = fdr_model(f["convention"], f["kT"], cfg.box, D=f.get("D"), sigma=f.get("sigma"),
                          F=f.get("F"), U=f.get("U"), name=cfg.name)
    elif cfg.builder == "thermophoresis":
        from .experiments import thermophoresis_model

        t = b["thermophoresis"]
        model = thermophoresis_model(t["F"], t["gamma"], t["D"], t["c"], cfg.box[0],
                                     zeta_box=tuple(t["zeta_box"]))
    else:
        c = b["colored_noise"]
        spec = ColoredNoiseSpec(cfg.dim, c["A"], c["lam"], c["tau0"], c["coupling"],
                                zeta_box=tuple(c["zeta_box"]))
        model = lift_colored_noise(c["F"], c["friction"], spec, cfg.box, scale=c["scale"],
                                   name=cfg.name)
    if "magnetic" in b:
        model = augment_magnetic(model, MagneticSpec(b["magnetic"]["q"], b["magnetic"]["B"]))
    return model


def solver_config(cfg, model_dim=None, **overrides):
    """The scenario's :class:`SolverConfig`, padding x0/v0 with zeros up to ``model_dim``."""
    s = dict(cfg.solver)
    s.update({k: v for k, v in overrides.items() if v is not None})
    n = model_dim or cfg.model_dim
    x0 = tuple(s["x0"]) + (0.0,) * (n - len(s["x0"]))
    v0 = None if s["v0"] is None else tuple(s["v0"]) + (0.0,) * (n - len(s["v0"]))
    return SolverConfig(dt=s["dt"], T=s["T"], paths=s["paths"], x0=x0, v0=v0, mass=s["mass"],
                        scheme=s["scheme"], record_every=s["record_every"],
                        threads=s["threads"], batch_size=s["batch_size"])
