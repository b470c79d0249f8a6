"""Command-line entry point: ``kramers <subcommand> ...``.

Exit codes: 0 success, 2 configuration error, 3 assumption failure,
4 numerical failure (including too many domain exits).

Report files
------------
converge.json
    masses, estimates (mean of per-path sup_t |x^m - x|^2), stderr
    (batch means), paths (kept), exits, slope and slope_ci (log-log fit,
    informational), monotone (strict decrease), valid (exits <= 1%),
    kinetic_plateau (mean of m|v|^2 over t >= T/2), alternatives
    (``no_drift``: the same estimates against the limit without S), meta.
converge.csv
    one row per mass: mass, estimate, stderr, paths, exits,
    kinetic_plateau, then ``<alt>_estimate`` / ``<alt>_stderr`` columns.
drift.csv
    one row per point: x*, S*, b*, h* (row-major), plus closed-form columns
    when the scenario has one.
ensemble_<kind>.csv / summary_<kind>.json
    path, t, x*, v* (full only), exited; per-time mean/var and kinetic mean.
stationary.json
    ks (per axis), samples, exits, kT_gibbs, valid, meta.
"""

import argparse
import csv
import io
import json
import sys
from dataclasses import replace

import numpy as np

from . import expr as ex
from . import scenarios
from .config import build_model, load, solver_config
from .drift import gibbs_drift_check, limit_sde, noise_induced_drift, symbolic_1d
from .errors import AssumptionError, ConfigError, KramersError, NumericalError
from .experiments import (
    ExitRateError,
    colored_noise_limit_check,
    mass_sweep,
    stationary_check,
    thermophoresis_drift_check,
)
from .model import check_assumptions
from .sde import atomic_write, simulate_full, simulate_limit, summary_json, write_ensemble_csv
from .smallmat import solve_lyapunov_direct, solve_lyapunov_quadrature

EXIT_OK, EXIT_CONFIG, EXIT_ASSUMPTION, EXIT_NUMERICAL = 0, 2, 3, 4


def _fmt(v):
    return f"{v: .10g}"


def _table(header, rows, out):
    cols = [header] + [[_fmt(v) if isinstance(v, float) else str(v) for v in r] for r in rows]
    widths = [max(len(r[i]) for r in cols) for i in range(len(header))]
    for r in cols:
        print("  ".join(c.rjust(w) for c, w in zip(r, widths)), file=out)


def _clean_matrix(a):
    return [[float(f"{v:.12g}") for v in row] for row in np.atleast_2d(a)]


def _overrides(args):
    return {"paths": getattr(args, "paths", None), "threads": getattr(args, "threads", None)}


def _seed(cfg, args):
    return args.seed if getattr(args, "seed", None) is not None else cfg.solver["seed"]


def _prepare(cfg, out):
    """Build the model and insist that it passes the assumption check."""
    model = build_model(cfg)
    report = check_assumptions(model)
    if not report.ok:
        raise AssumptionError(
            f"scenario {cfg.name!r} fails the assumption check on its box", report)
    print(f"# {cfg.name}: c_lambda ~ {report.c_lambda_est:.4g} at {list(report.c_lambda_point)}, "
          f"C_T ~ {report.C_T_est:.4g}", file=out)
    return model


def _parse_point(text, dim):
    try:
        vals = [float(v) for v in text.split(",")]
    except ValueError:
        raise ConfigError(f"--point {text!r}: expected comma-separated numbers") from None
    if len(vals) != dim:
        raise ConfigError(f"--point {text!r}: expected {dim} coordinates")
    return vals


# -- drift ------------------------------------------------------------------

def drift_table(cfg, model, points, out, form="ito", include_noise_drift=True, out_dir=None):
    d = cfg.dim
    pts = np.asarray(points, dtype=float).reshape(-1, d)
    z = np.concatenate([pts, np.zeros((len(pts), model.dim - d))], axis=-1)
    sde = limit_sde(model, form=form, include_noise_drift=include_noise_drift)
    S = noise_induced_drift(model, z)
    b = sde.drift(z)
    h = sde.diffusion(z)
    n, k = model.dim, model.noise_dim
    header = ([f"x{i + 1}" for i in range(n)] + [f"S{i + 1}" for i in range(n)]
              + [f"b{i + 1}" for i in range(n)]
              + [f"h{i + 1}{j + 1}" for i in range(n) for j in range(k)])
    rows = [list(z[p]) + list(S[p]) + list(b[p]) + list(h[p].ravel()) for p in range(len(z))]
    extra = {}
    if model.dim == 1 and model.noise_dim == 1 and model.exprs is not None:
        forms = symbolic_1d(model)
        print(f"# S(x) = {forms['S']}", file=out)
        closed = ex.evaluate(ex.parse(forms["S"], 1), pts)
        extra["S_closed"] = closed
        print(f"# max |S - closed form| = {np.abs(closed - S[:, 0]).max():.3e}", file=out)
    if "fdr" in model.meta and model.meta["fdr"]["U"] is not None:
        res = gibbs_drift_check(model, model.meta["fdr"]["U"], pts)
        print(f"# max stationary Fokker-Planck residual of exp(-U/kT): {res.max():.3e}", file=out)
    if "thermophoresis" in model.meta:
        t = model.meta["thermophoresis"]
        chk = thermophoresis_drift_check(t["F"], t["gamma"], t["D"], t["c"], pts[:, 0])
        print(f"# thermophoresis closed form: drift err {chk['drift_err']:.3e}, "
              f"diffusion err {chk['diffusion_err']:.3e}", file=out)
    if cfg.builder == "colored_noise":
        _colored_closed_form(cfg.blocks["colored_noise"], cfg.box[0], pts, out)
    for key, col in extra.items():
        header.append(key)
        for r, v in zip(rows, col):
            r.append(float(v))
    rows = [[float(v) for v in r] for r in rows]
    _table(header, rows, out)
    if out_dir is not None:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([repr(v) for v in r])
        atomic_write(f"{out_dir}/drift.csv", buf.getvalue())
    return header, rows


def _colored_closed_form(c, box, pts, out):
    """Closed-form check for one base coordinate, one OU mode, unit friction."""
    if len(pts[0]) != 1 or len(c["A"]) != 1 or len(c["lam"][0]) != 1:
        return
    if ex.depends_on(c["scale"]) or ex.to_string(c["friction"][0][0]) not in ("1", "1.0"):
        return
    k = 1.0 / float(ex.evaluate(c["scale"], np.zeros(1)))
    a = c["A"][0][0] / c["tau0"]
    lam = (c["lam"][0][0] / c["tau0"]) ** 2 / 2
    chk = colored_noise_limit_check(ex.to_string(c["coupling"][0][0]), ex.to_string(c["F"][0]),
                                    k=k, a=a, lam=lam, points=pts[:, 0], box=tuple(box))
    print(f"# constant-friction colored-noise closed form: drift err "
          f"{chk['drift_err']:.3e}, diffusion err {chk['diffusion_err']:.3e}", file=out)


def cmd_drift(args, out):
    cfg = load(args.config)
    model = _prepare(cfg, out)
    if args.point:
        pts = [_parse_point(p, cfg.dim) for p in args.point]
    elif "drift_points" in cfg.experiment:
        pts = cfg.experiment["drift_points"]
    else:
        raise ConfigError("no points: pass --point or set [experiment].drift_points")
    drift_table(cfg, model, pts, out, form=args.form,
                include_noise_drift=not args.no_noise_drift, out_dir=args.out_dir)
    return EXIT_OK


# -- lyapunov ---------------------------------------------------------------

def _json_matrix(text, name):
    try:
        a = np.asarray(json.loads(text), dtype=float)
    except (ValueError, TypeError) as err:
        raise ConfigError(f"--{name}: expected a JSON matrix such as [[1,0],[0,1]] ({err})") from None
    if a.ndim == 0:
        a = a.reshape(1, 1)
    if a.ndim != 2:
        raise ConfigError(f"--{name}: expected a 2D matrix")
    return a


def cmd_lyapunov(args, out):
    g = _json_matrix(args.gamma, "gamma")
    if (args.c is None) == (args.sigma is None):
        raise ConfigError("give exactly one of --c (sigma sigma^T) or --sigma")
    if args.c is not None:
        c = _json_matrix(args.c, "c")
    else:
        s = _json_matrix(args.sigma, "sigma")
        c = s @ s.T
    if g.shape[0] != g.shape[1] or c.shape != g.shape:
        raise ConfigError(f"shape mismatch: gamma {g.shape}, c {c.shape}")
    methods = ["direct", "quadrature"] if args.method == "both" else [args.method]
    sols = {}
    for m in methods:
        sol = solve_lyapunov_direct(g, c) if m == "direct" else solve_lyapunov_quadrature(g, c)
        sols[m] = sol
        print(f"{m}: J = {json.dumps(_clean_matrix(sol.J))}", file=out)
        print(f"{m}: residual = {sol.residual:.3e}", file=out)
    if len(sols) == 2:
        diff = np.abs(sols["direct"].J - sols["quadrature"].J).max()
        print(f"max |J_direct - J_quadrature| = {diff:.3e}", file=out)
    return EXIT_OK


# -- simulate / converge ------------------------------------------------------

def cmd_simulate(args, out):
    cfg = load(args.config)
    model = _prepare(cfg, out)
    scfg = solver_config(cfg, model.dim, **_overrides(args))
    seed = _seed(cfg, args)
    kinds = ["full", "limit"] if args.kind == "both" else [args.kind]
    for kind in kinds:
        if kind == "full":
            mass = args.mass if args.mass is not None else scfg.mass
            if mass is None:
                raise ConfigError("full simulation needs a mass: set [solver].mass or --mass")
            run = replace(scfg, mass=mass)
            ens = simulate_full(model, run, run.grid(seed, model.noise_dim, args.level or 0))
        else:
            ens = simulate_limit(limit_sde(model), scfg, scfg.grid(seed, model.noise_dim))
        write_ensemble_csv(ens, f"{args.out_dir}/ensemble_{kind}.csv")
        atomic_write(f"{args.out_dir}/summary_{kind}.json", summary_json(ens) + "\n")
        print(f"{kind}: {ens.x.shape[0]} paths, {len(ens.times)} records, "
              f"{int(ens.exited.sum())} exited, {int(ens.failed.sum())} failed -> "
              f"{args.out_dir}/ensemble_{kind}.csv", file=out)
    return EXIT_OK


def run_converge(cfg, model, args, out):
    if "masses" not in cfg.experiment:
        raise ConfigError("converge needs [experiment].masses")
    scfg = solver_config(cfg, model.dim, **_overrides(args))
    comps = list(range(cfg.dim))
    try:
        rep = mass_sweep(model, cfg.experiment["masses"], scfg, seed=_seed(cfg, args),
                         compare_no_drift=cfg.experiment.get("compare_no_drift", False),
                         independent_noise=cfg.experiment.get("independent_noise", False),
                         components=comps,
                         steps_per_relaxation=cfg.solver["steps_per_relaxation"])
    except ExitRateError as err:
        err.report.write(args.out_dir)
        raise
    rep.meta["scenario"] = cfg.name
    rep.write(args.out_dir)
    header = ["mass", "estimate", "stderr", "paths", "exits", "kinetic"]
    rows = [[m, e, s, p, x, k] for m, e, s, p, x, k in zip(
        rep.masses, rep.estimates, rep.stderr, rep.paths, rep.exits, rep.kinetic_plateau)]
    for name, alt in sorted(rep.alternatives.items()):
        header.append(f"{name}")
        for r, v in zip(rows, alt["estimates"]):
            r.append(v)
    _table(header, rows, out)
    ci = rep.slope_ci
    print(f"# monotone decrease: {rep.monotone}; log-log slope {rep.slope:.3g}"
          + (f" (95% CI {ci[0]:.3g} .. {ci[1]:.3g})" if ci else "")
          + f"; report -> {args.out_dir}/converge.json", file=out)
    return rep


def cmd_converge(args, out):
    cfg = load(args.config)
    model = _prepare(cfg, out)
    run_converge(cfg, model, args, out)
    return EXIT_OK


def run_stationary(cfg, model, args, out):
    st = cfg.experiment["stationary"]
    over = _overrides(args)
    for key in ("T", "dt", "paths"):
        if key in st and over.get(key) is None:
            over[key] = st[key]
    scfg = solver_config(cfg, model.dim, **over)
    U = model.meta["fdr"]["U"]
    try:
        res = stationary_check(limit_sde(model), scfg, U, seed=_seed(cfg, args),
                               burn_in=st["burn_in"], record_dt=st["record_dt"])
    except ExitRateError as err:
        atomic_write(f"{args.out_dir}/stationary.json",
                     json.dumps(err.report.to_dict(), indent=2, sort_keys=True) + "\n")
        raise
    atomic_write(f"{args.out_dir}/stationary.json",
                 json.dumps(res.to_dict(), indent=2, sort_keys=True) + "\n")
    print(f"# stationary: KS per axis {[round(k, 4) for k in res.ks]} from {res.samples} "
          f"samples against exp(-U/{res.kT_gibbs:g})", file=out)
    return res


# -- scenario -----------------------------------------------------------------

def cmd_scenario(args, out):
    if args.action == "list":
        for name in scenarios.names():
            print(f"{name:20s} {scenarios.get(name).description}", file=out)
        return EXIT_OK
    if args.action == "show":
        if not args.name:
            raise ConfigError("scenario show needs a NAME")
        out.write(scenarios.text(args.name))
        return EXIT_OK
    if args.config:
        cfg = load(args.config)
    elif args.name:
        cfg = scenarios.get(args.name)
    else:
        raise ConfigError("scenario run needs a NAME or --config FILE")
    model = _prepare(cfg, out)
    exp = cfg.experiment
    if "drift_points" in exp:
        drift_table(cfg, model, exp["drift_points"], out, out_dir=args.out_dir)
    if "masses" in exp:
        run_converge(cfg, model, args, out)
    if "stationary" in exp:
        run_stationary(cfg, model, args, out)
    return EXIT_OK


# -- argument parsing -----------------------------------------------------------

def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, help="override the scenario seed")
    common.add_argument("--paths", type=int, help="override the path count")
    common.add_argument("--out-dir", default="kramers-out", help="output directory")
    common.add_argument("--threads", type=int,
                        help="worker threads (results do not depend on it)")

    p = argparse.ArgumentParser(
        prog="kramers",
        description="Small-mass limits of inertial Langevin systems.",
        epilog="Exit codes: 0 ok, 2 config error, 3 assumption failure, 4 numerical failure.",
        formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = p.add_subparsers(dest="command", required=True)

    d = sub.add_parser("drift", parents=[common], help="print S, b and h at points")
    d.add_argument("config")
    d.add_argument("--point", action="append",
                   help="comma-separated point (repeatable); use --point=-1,2 for negatives")
    d.add_argument("--form", choices=["ito", "stratonovich"], default="ito")
    d.add_argument("--no-noise-drift", action="store_true", help="drop S from the limit")
    d.set_defaults(func=cmd_drift, out_dir=None)

    ly = sub.add_parser("lyapunov", help="solve J gamma^T + gamma J = sigma sigma^T")
    ly.add_argument("--gamma", required=True, help="JSON matrix")
    ly.add_argument("--c", help="JSON matrix sigma sigma^T")
    ly.add_argument("--sigma", help="JSON matrix sigma (c = sigma sigma^T)")
    ly.add_argument("--method", choices=["direct", "quadrature", "both"], default="direct")
    ly.set_defaults(func=cmd_lyapunov)

    s = sub.add_parser("simulate", parents=[common], help="write an ensemble CSV")
    s.add_argument("config")
    s.add_argument("--kind", choices=["full", "limit", "both"], default="limit")
    s.add_argument("--mass", type=float)
    s.add_argument("--level", type=int, help="dyadic refinement level of the full-system step")
    s.set_defaults(func=cmd_simulate)

    c = sub.add_parser("converge", parents=[common], help="coupled mass sweep",
                       description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    c.add_argument("config")
    c.set_defaults(func=cmd_converge)

    sc = sub.add_parser("scenario", parents=[common], help="built-in scenario catalog")
    sc.add_argument("action", choices=["list", "show", "run"])
    sc.add_argument("name", nargs="?")
    sc.add_argument("--config", help="run this scenario file instead of a catalog entry")
    sc.set_defaults(func=cmd_scenario)
    return p


def run(argv=None, out=None, err=None):
    """Run the CLI and return its exit status."""
    out = out or sys.stdout
    err = err or sys.stderr
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code in (0, None) else EXIT_CONFIG
    try:
        return args.func(args, out)
    except AssumptionError as exc:
        print(f"assumption failure: {exc}", file=err)
        if exc.report is not None:
            print(json.dumps(exc.report.to_dict(), indent=2), file=err)
        return EXIT_ASSUMPTION
    except ConfigError as exc:
        print(f"config error: {exc}", file=err)
        return EXIT_CONFIG
    except ex.ExprSyntaxError as exc:
        print(f"config error: {exc}", file=err)
        return EXIT_CONFIG
    except (NumericalError, ExitRateError, ex.ExprDomainError) as exc:
        print(f"numerical failure: {exc}", file=err)
        return EXIT_NUMERICAL
    except KramersError as exc:
        print(f"error: {exc}", file=err)
        return EXIT_NUMERICAL


def main():
    sys.exit(run())
