"""Coupled-noise mass sweeps, colored-noise sweeps and stationary checks.

A sweep simulates the inertial system for each mass and the limiting SDE
once, all on the same Brownian paths, and estimates

    E[ sup_{t <= T} |x^m_t - x_t|^2 ]

from the recorded grid (spacing = the limit integrator's step).  The
inertial integrator runs on a dyadic refinement of that grid, fine enough
to resolve the velocity relaxation time ``m / |gamma|``.
"""

import csv
import io
import json
import math
import warnings
from dataclasses import asdict, dataclass, field, replace
from typing import Optional

import numpy as np
from scipy import stats
from scipy.integrate import cumulative_trapezoid, trapezoid

from . import expr as ex
from .drift import _fdr_temperature, limit_sde
from .errors import ConfigError, KramersError
from .model import lift_colored_noise
from .sde import atomic_write, kinetic_energy_stats, simulate_full, simulate_limit

__all__ = [
    "ConvergenceReport",
    "ExitRateError",
    "mass_sweep",
    "colored_noise_sweep",
    "colored_noise_limit_check",
    "thermophoresis_model",
    "thermophoresis_drift_check",
    "stationary_check",
    "StationaryResult",
    "ks_distance",
    "gibbs_marginal_cdf",
    "full_level",
]

EXIT_THRESHOLD = 0.01
DISCRETISATION_NOTE = (
    "sup taken over the recorded grid only; estimates include the bias of "
    "Euler-Maruyama on the limit and of the frozen-coefficient inertial step")


class ExitRateError(KramersError):
    """Too many paths left the domain box; the report is attached."""

    def __init__(self, message, report):
        super().__init__(message)
        self.report = report


@dataclass
class ConvergenceReport:
    masses: list
    estimates: list
    stderr: list
    paths: list
    exits: list
    slope: Optional[float]
    slope_ci: Optional[list]
    monotone: bool
    valid: bool
    kinetic_plateau: Optional[list] = None
    alternatives: dict = field(default_factory=dict)
    meta: dict = field(default_factory=dict)

    def to_dict(self):
        return asdict(self)

    def to_json(self):
        return json.dumps(_clean(self.to_dict()), indent=2, sort_keys=True) + "\n"

    def to_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        extra = sorted(self.alternatives)
        w.writerow(["mass", "estimate", "stderr", "paths", "exits", "kinetic_plateau"]
                   + [f"{k}_estimate" for k in extra] + [f"{k}_stderr" for k in extra])
        for i, m in enumerate(self.masses):
            ke = self.kinetic_plateau[i] if self.kinetic_plateau else ""
            w.writerow([repr(m), repr(self.estimates[i]), repr(self.stderr[i]), self.paths[i],
                        self.exits[i], repr(ke) if ke != "" else ""]
                       + [repr(self.alternatives[k]["estimates"][i]) for k in extra]
                       + [repr(self.alternatives[k]["stderr"][i]) for k in extra])
        return buf.getvalue()

    def write(self, directory, stem="converge"):
        atomic_write(f"{directory}/{stem}.json", self.to_json())
        atomic_write(f"{directory}/{stem}.csv", self.to_csv())


def _clean(obj):
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else None
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def batch_mean_stderr(values, n_batches=20):
    """Mean and batch-means standard error of independent per-path values."""
    values = np.asarray(values, dtype=float)
    n = len(values)
    if n == 0:
        return float("nan"), float("nan")
    nb = min(n_batches, n)
    means = np.array([b.mean() for b in np.array_split(values, nb)])
    sizes = np.array([len(b) for b in np.array_split(values, nb)])
    mean = float(values.mean())
    if nb < 2:
        return mean, float("nan")
    # size-weighted batch means keep the estimator unbiased for uneven splits
    var = np.sum(sizes * (means - mean) ** 2) / (nb - 1) / n
    return mean, float(np.sqrt(var))


def fit_slope(masses, estimates, level=0.95):
    """OLS slope of log(estimate) against log(mass) with a t interval."""
    m = np.log(np.asarray(masses, dtype=float))
    y = np.asarray(estimates, dtype=float)
    if len(m) < 2 or np.any(~np.isfinite(y)) or np.any(y <= 0):
        return None, None
    y = np.log(y)
    A = np.vstack([m, np.ones_like(m)]).T
    coef, *_ = np.linalg.lstsq(A, y, rcond=None)
    slope = float(coef[0])
    dof = len(m) - 2
    if dof < 1:
        return slope, None
    resid = y - A @ coef
    s2 = resid @ resid / dof
    se = math.sqrt(s2 / np.sum((m - m.mean()) ** 2))
    q = stats.t.ppf(0.5 + level / 2, dof)
    return slope, [slope - q * se, slope + q * se]


def full_level(model, mass, dt, steps_per_relaxation):
    """Smallest dyadic level whose step resolves ``mass / |gamma|_max``."""
    gmax = np.linalg.norm(model.gamma(model.grid(5)), ord=2, axis=(-2, -1)).max()
    target = mass / (steps_per_relaxation * gmax)
    return max(0, int(math.ceil(math.log2(dt / target) - 1e-12)))


def _sup_sq(full_x, lim_x, comps):
    diff = full_x[..., comps] - lim_x[..., comps]
    return np.max(np.sum(diff ** 2, axis=-1), axis=1)


def mass_sweep(model, masses, cfg, seed=0, include_noise_drift=True, compare_no_drift=False,
               components=None, steps_per_relaxation=4, independent_noise=False,
               plateau_from=0.5, n_batches=20, exit_threshold=EXIT_THRESHOLD, strict=True,
               limit=None):
    """Estimate the coupled sup-norm L2 distance for each mass.

    ``cfg.dt`` is the limit step and the comparison grid.  With
    ``compare_no_drift`` the same inertial paths are also compared against
    the limit with the noise-induced drift removed; the result goes to
    ``report.alternatives["no_drift"]``.  ``independent_noise`` drives the
    inertial system with a different seed (a negative control).
    """
    masses = [float(m) for m in masses]
    if not masses or any(b >= a for a, b in zip(masses, masses[1:])):
        raise ConfigError("masses must be strictly decreasing")
    if any(m <= 0 for m in masses):
        raise ConfigError("masses must be positive")
    comps = list(range(model.dim)) if components is None else list(components)
    k = model.noise_dim
    grid = cfg.grid(seed, k)
    lim_cfg = replace(cfg, mass=None, v0=None, record_every=1)

    sde = limit if limit is not None else limit_sde(model, include_noise_drift=include_noise_drift)
    lim = simulate_limit(sde, lim_cfg, grid)
    refs = {"limit": lim}
    if compare_no_drift:
        refs["no_drift"] = simulate_limit(limit_sde(model, include_noise_drift=False), lim_cfg, grid)

    results = {name: {"estimates": [], "stderr": []} for name in refs}
    paths, exits, plateaus, levels = [], [], [], []
    for m in masses:
        level = full_level(model, m, cfg.dt, steps_per_relaxation)
        levels.append(level)
        full_cfg = replace(cfg, mass=m, record_every=2 ** level)
        full_grid = (cfg.grid(seed + 1 if independent_noise else seed, k)).at_level(level)
        full = simulate_full(model, full_cfg, full_grid)
        bad = ~full.valid
        for ref in refs.values():
            bad |= ~ref.valid
        keep = ~bad
        paths.append(int(keep.sum()))
        exits.append(int(bad.sum()))
        for name, ref in refs.items():
            est, se = batch_mean_stderr(_sup_sq(full.x[keep], ref.x[keep], comps), n_batches)
            results[name]["estimates"].append(est)
            results[name]["stderr"].append(se)
        ke = kinetic_energy_stats(full)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            plateaus.append(float(np.nanmean(ke[full.times >= plateau_from * cfg.T])))

    est = results["limit"]["estimates"]
    slope, ci = fit_slope(masses, est)
    valid = all(e <= exit_threshold * cfg.paths for e in exits)
    report = ConvergenceReport(
        masses=masses, estimates=est, stderr=results["limit"]["stderr"],
        paths=paths, exits=exits, slope=slope, slope_ci=ci,
        monotone=all(b < a for a, b in zip(est, est[1:])),
        valid=valid, kinetic_plateau=plateaus,
        alternatives={k2: v for k2, v in results.items() if k2 != "limit"},
        meta={
            "model": model.name, "seed": seed, "T": cfg.T, "dt_limit": cfg.dt,
            "dt_full": [cfg.dt / 2 ** lv for lv in levels], "paths_requested": cfg.paths,
            "components": comps, "include_noise_drift": include_noise_drift,
            "independent_noise": independent_noise, "x0": list(cfg.x0),
            "v0": list(cfg.v0) if cfg.v0 is not None else None,
            "scheme": cfg.scheme, "note": DISCRETISATION_NOTE,
        },
    )
    if not valid and strict:
        raise ExitRateError(
            f"exit rate above {exit_threshold:.0%} (exits per mass: {exits})", report)
    return report


# -- colored noise ----------------------------------------------------------

def colored_noise_sweep(F, friction, spec, box, masses, cfg, seed=0, scale="1", **kw):
    """Mass sweep of the lifted system; only the original coordinates are compared.

    ``cfg.x0`` may give the base position only, in which case ``zeta`` starts
    at 0; ``cfg.v0`` likewise may omit ``eta`` (started at 0).
    """
    model = lift_colored_noise(F, friction, spec, box, scale=scale)
    d = spec.base_dim
    x0 = tuple(cfg.x0) + (0.0,) * (model.dim - len(cfg.x0))
    v0 = None if cfg.v0 is None else tuple(cfg.v0) + (0.0,) * (model.dim - len(cfg.v0))
    report = mass_sweep(model, masses, replace(cfg, x0=x0, v0=v0), seed=seed,
                        components=list(range(d)), **kw)
    report.meta["colored_noise"] = dict(model.meta["colored_noise"])
    return report


def colored_noise_limit_check(f, F="0", k=1.0, a=1.0, lam=1.0, points=None, box=(-3, 3)):
    """Compare the lifted limit with the closed form for constant friction.

    System: ``k m x'' = F - x' + f eta`` with OU noise of rate ``a`` and
    strength ``sqrt(2 lam)``.  Closed form of the x-limit:
    drift ``F + lam f' f / (a^2 (1 + k a))``, diffusion ``sqrt(2 lam / a^2) f``.
    Returns max abs errors of drift and diffusion at ``points``.
    """
    from .model import ColoredNoiseSpec

    spec = ColoredNoiseSpec(1, [[a]], [[math.sqrt(2 * lam)]], 1.0, [[f]])
    model = lift_colored_noise([F], [["1"]], spec, [box], scale=f"1/{k!r}")
    sde = limit_sde(model)
    pts = np.linspace(box[0], box[1], 41) if points is None else np.asarray(points, dtype=float)
    z = np.stack([pts, np.zeros_like(pts)], axis=-1)
    fe, Fe = ex.parse(str(f), 1), ex.parse(str(F), 1)
    fv = ex.evaluate(fe, pts[:, None])
    fp = ex.evaluate(ex.deriv(fe, 1), pts[:, None])
    drift = ex.evaluate(Fe, pts[:, None]) + lam * fp * fv / (a * a * (1 + k * a))
    diff = math.sqrt(2 * lam / a ** 2) * fv
    b = sde.drift(z)[:, 0]
    h = sde.diffusion(z)[:, 0, 0]
    return {"drift_err": float(np.abs(b - drift).max()),
            "diffusion_err": float(np.abs(h - diff).max()), "points": len(pts)}


def thermophoresis_model(F, gamma, D, c, box, zeta_box=(-1e3, 1e3)):
    """Lifted thermophoresis system with ``theta(x) = c / gamma(x)``.

    The small parameter is the noise correlation time; ``c`` is the fixed
    ratio of mass to correlation time.
    """
    from .model import ColoredNoiseSpec

    ge = _expr1(gamma)
    De = _expr1(D)
    coupling = ex.call("sqrt", ex.mul(ex.num(2), De))
    spec = ColoredNoiseSpec(1, [[2.0]], [[2.0]], 1.0, [[coupling]], zeta_box=zeta_box)
    scale = ex.div(ge, ex.num(c))
    return lift_colored_noise([F], [["1"]], spec, [box], scale=scale, name="thermophoresis",
                              meta={"thermophoresis": {"gamma": ex.to_string(ge),
                                                       "D": ex.to_string(De), "c": float(c),
                                                       "F": ex.to_string(_expr1(F))}})


def _expr1(e):
    return e if isinstance(e, ex.Expr) else ex.parse(str(e), 1)


def thermophoresis_drift_check(F, gamma, D, c, points):
    """Limit drift of the lifted thermophoresis model against closed forms.

    Returns the max abs error against ``F + (gamma D' - 4 theta gamma' D) /
    (2 gamma (1 + 2 theta))`` and against the same expression with ``F``
    replaced by ``F / theta``, plus the diffusion error against ``sqrt(2D)``.
    """
    pts = np.asarray(points, dtype=float).reshape(-1)
    box = (float(pts.min()) - 1.0, float(pts.max()) + 1.0)
    model = thermophoresis_model(F, gamma, D, c, box)
    sde = limit_sde(model)
    z = np.stack([pts, np.zeros_like(pts)], axis=-1)
    b = sde.drift(z)[:, 0]
    h = sde.diffusion(z)[:, 0, 0]
    x = pts[:, None]
    ge, De, Fe = (_expr1(s) for s in (gamma, D, F))
    g, gp = ex.evaluate(ge, x), ex.evaluate(ex.deriv(ge, 1), x)
    Dv, Dp = ex.evaluate(De, x), ex.evaluate(ex.deriv(De, 1), x)
    Fv = ex.evaluate(Fe, x)
    theta = c / g
    noise = (g * Dp - 4 * theta * gp * Dv) / (2 * g * (1 + 2 * theta))
    return {
        "drift_err": float(np.abs(b - (Fv + noise)).max()),
        "drift_err_F_over_theta": float(np.abs(b - (Fv / theta + noise)).max()),
        "diffusion_err": float(np.abs(h - np.sqrt(2 * Dv)).max()),
    }


# -- stationary check -------------------------------------------------------

def ks_distance(samples, cdf_x, cdf_y):
    """Two-sided KS distance of samples against a tabulated CDF."""
    s = np.sort(np.asarray(samples, dtype=float))
    n = len(s)
    F = np.interp(s, cdf_x, cdf_y)
    i = np.arange(1, n + 1)
    return float(max(np.max(i / n - F), np.max(F - (i - 1) / n)))


def gibbs_marginal_cdf(U, kT, box, axis=0, n=None):
    """Marginal CDF along ``axis`` of ``exp(-U/kT)`` on the box, by quadrature."""
    box = np.asarray(box, dtype=float)
    d = len(box)
    n = n or {1: 20001, 2: 801, 3: 161}.get(d, 41)
    axes = [np.linspace(lo, hi, n) for lo, hi in box]
    mesh = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)
    u = ex.evaluate(ex.parse(str(U), d) if isinstance(U, str) else U, mesh)
    w = np.exp(-(u - u.min()) / kT)
    for ax in reversed(range(d)):
        if ax != axis:
            w = trapezoid(w, axes[ax], axis=ax)
    cdf = cumulative_trapezoid(w, axes[axis], initial=0.0)
    return axes[axis], cdf / cdf[-1]


@dataclass
class StationaryResult:
    ks: list
    samples: int
    exits: int
    kT_gibbs: float
    valid: bool
    meta: dict = field(default_factory=dict)

    def to_dict(self):
        return _clean(asdict(self))


def stationary_check(sde, cfg, U, seed=0, kT=None, burn_in=0.1, record_dt=1.0,
                     exit_threshold=EXIT_THRESHOLD, strict=True):
    """KS distance between pooled long-run samples and the Gibbs marginals.

    ``sde`` comes from an FDR model; the Gibbs temperature follows its
    convention (``kT`` for ``2kT``, ``kT/2`` for ``kT``).
    """
    model = sde.model
    if "fdr" not in model.meta:
        raise ConfigError("stationary_check needs a model built by fdr_model")
    temp = _fdr_temperature(model, kT)
    every = max(1, int(round(record_dt / cfg.dt)))
    ens = simulate_limit(sde, replace(cfg, record_every=every), cfg.grid(seed, sde.noise_dim))
    keep = ens.valid
    exits = int((~keep).sum())
    x = ens.x[keep][:, ens.times >= burn_in * cfg.T]
    pooled = x.reshape(-1, sde.dim)
    ks = []
    for axis in range(sde.dim):
        gx, gc = gibbs_marginal_cdf(U, temp, sde.box, axis)
        ks.append(ks_distance(pooled[:, axis], gx, gc))
    valid = exits <= exit_threshold * cfg.paths
    res = StationaryResult(ks=ks, samples=len(pooled), exits=exits, kT_gibbs=temp, valid=valid,
                           meta={"seed": seed, "T": cfg.T, "dt": cfg.dt, "burn_in": burn_in,
                                 "record_dt": every * cfg.dt, "paths": cfg.paths})
    if not valid and strict:
        raise ExitRateError(f"exit rate above {exit_threshold:.0%} ({exits} paths)", res)
    return res
