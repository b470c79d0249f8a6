"""Path simulation of the inertial system and of its small-mass limit.

Both integrators read the same Brownian increments from a
:class:`WienerGrid`, so an inertial path and a limiting path with the same
``(seed, path index)`` are driven by the same Brownian motion.

The inertial step freezes ``F, gamma, sigma`` at the current position and
samples the *exact* Gaussian law of ``(x_{n+1} - x_n, v_{n+1})`` for the
resulting linear SDE, conditioned on the shared increment ``Delta W``.  The
step is stable for any ``dt / m``.
"""

import csv
import io
import json
import os
import tempfile
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from . import expr as ex
from .errors import ConfigError, NumericalError
from .smallmat import mat_exp

__all__ = [
    "WienerGrid",
    "SolverConfig",
    "PathEnsemble",
    "simulate_limit",
    "simulate_full",
    "kinetic_energy_stats",
    "write_ensemble_csv",
    "ensemble_summary",
    "atomic_write",
]

_MASK64 = (1 << 64) - 1
_WIENER, _AUX = 0, 1


def _generator(seed, path, kind, level):
    key = np.array([seed & _MASK64, ((int(path) << 16) | (kind << 8) | level) & _MASK64],
                   dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


@dataclass(frozen=True)
class WienerGrid:
    """Brownian increments for every path index on a dyadic time grid.

    Increments at ``level`` L have step ``dt / 2**L``.  Level 0 is drawn
    from a Philox stream keyed on ``(seed, path)``; each finer level splits
    every increment with an independent Brownian-bridge draw from its own
    stream, so coarse increments are exactly the pairwise sums of fine ones
    (up to floating-point rounding) and every level is reproducible.
    """

    seed: int
    n_steps: int
    dt: float
    noise_dim: int
    level: int = 0

    def __post_init__(self):
        if self.n_steps < 1 or self.dt <= 0 or self.noise_dim < 1:
            raise ValueError("WienerGrid needs n_steps >= 1, dt > 0, noise_dim >= 1")
        if not 0 <= self.level < 256:
            raise ValueError("level out of range")

    @property
    def step(self):
        return self.dt / 2 ** self.level

    @property
    def step_count(self):
        return self.n_steps * 2 ** self.level

    @property
    def horizon(self):
        return self.n_steps * self.dt

    def at_level(self, level):
        return replace(self, level=level)

    def refine(self, levels=1):
        return self.at_level(self.level + levels)

    def path_increments(self, path):
        k = self.noise_dim
        dw = _generator(self.seed, path, _WIENER, 0).standard_normal((self.n_steps, k))
        dw *= np.sqrt(self.dt)
        h = self.dt
        for lev in range(1, self.level + 1):
            z = _generator(self.seed, path, _WIENER, lev).standard_normal(dw.shape)
            left = 0.5 * dw + 0.5 * np.sqrt(h) * z
            fine = np.empty((2 * len(dw), k))
            fine[0::2] = left
            fine[1::2] = dw - left
            dw = fine
            h *= 0.5
        return dw

    def increments(self, paths):
        """Array ``(len(paths), step_count, noise_dim)`` of increments."""
        return np.stack([self.path_increments(p) for p in np.atleast_1d(paths)])

    def auxiliary(self, paths, width):
        """Extra standard normals ``(len(paths), step_count, width)`` for this level."""
        return np.stack([
            _generator(self.seed, p, _AUX, self.level).standard_normal((self.step_count, width))
            for p in np.atleast_1d(paths)])


@dataclass(frozen=True)
class SolverConfig:
    """Time stepping parameters.

    ``dt`` is the base step; the integrators run at the step of the
    :class:`WienerGrid` they are handed, which may be a dyadic refinement.
    """

    dt: float
    T: float
    paths: int
    x0: tuple
    v0: Optional[tuple] = None
    mass: Optional[float] = None
    scheme: str = "splitting"
    record_every: int = 1
    threads: int = 1
    batch_size: int = 256

    def __post_init__(self):
        if self.dt <= 0 or self.T <= 0:
            raise ConfigError("dt and T must be positive")
        n = self.T / self.dt
        if abs(n - round(n)) > 1e-9 * n:
            raise ConfigError(f"T / dt must be an integer, got {n}")
        if self.paths < 1:
            raise ConfigError("paths must be >= 1")
        if self.scheme not in ("splitting", "euler"):
            raise ConfigError(f"unknown scheme {self.scheme!r}")
        if self.mass is not None and self.mass <= 0:
            raise ConfigError("mass must be positive")
        if self.record_every < 1 or self.threads < 1 or self.batch_size < 1:
            raise ConfigError("record_every, threads and batch_size must be >= 1")

    @property
    def n_steps(self):
        return int(round(self.T / self.dt))

    def grid(self, seed, noise_dim, level=0):
        return WienerGrid(seed, self.n_steps, self.dt, noise_dim, level)


@dataclass
class PathEnsemble:
    """Recorded trajectories.  States after a path's exit are NaN."""

    kind: str
    mass: Optional[float]
    times: np.ndarray
    x: np.ndarray
    v: Optional[np.ndarray]
    exited: np.ndarray
    failed: np.ndarray
    exit_time: np.ndarray
    kinetic_max: Optional[np.ndarray] = None
    paths: np.ndarray = field(default=None)

    @property
    def valid(self):
        return ~(self.exited | self.failed)


def _batches(n, size):
    return [np.arange(i, min(i + size, n)) for i in range(0, n, size)]


def _run_batches(cfg, work):
    batches = _batches(cfg.paths, cfg.batch_size)
    if cfg.threads > 1 and len(batches) > 1:
        with ThreadPoolExecutor(max_workers=cfg.threads) as pool:
            return list(pool.map(work, batches))
    return [work(b) for b in batches]


def _check_grid(cfg, noise):
    if abs(noise.horizon - cfg.T) > 1e-12 * cfg.T or noise.n_steps != cfg.n_steps:
        raise ConfigError("Wiener grid does not match the solver horizon")


class _Recorder:
    def __init__(self, n_paths, n_steps, every, dim, with_v):
        self.every = every
        n_rec = n_steps // every + 1
        self.x = np.full((n_paths, n_rec, dim), np.nan)
        self.v = np.full((n_paths, n_rec, dim), np.nan) if with_v else None

    def store(self, step, x, v, alive):
        if step % self.every:
            return
        r = step // self.every
        self.x[alive, r] = x[alive]
        if self.v is not None:
            self.v[alive, r] = v[alive]


def _advance_mask(x_new, x_old, box):
    finite = np.all(np.isfinite(x_new), axis=-1)
    inside = finite & np.all((x_new >= box[:, 0]) & (x_new <= box[:, 1]), axis=-1)
    return finite, inside


def _assemble(kind, mass, cfg, noise, parts, with_v):
    every = cfg.record_every
    n_rec = noise.step_count // every + 1
    times = np.arange(n_rec) * every * noise.step
    x = np.concatenate([p["x"] for p in parts])
    v = np.concatenate([p["v"] for p in parts]) if with_v else None
    return PathEnsemble(
        kind=kind, mass=mass, times=times, x=x, v=v,
        exited=np.concatenate([p["exited"] for p in parts]),
        failed=np.concatenate([p["failed"] for p in parts]),
        exit_time=np.concatenate([p["exit_time"] for p in parts]),
        kinetic_max=np.concatenate([p["kmax"] for p in parts]) if with_v else None,
        paths=np.arange(cfg.paths),
    )


def simulate_limit(sde, cfg, noise):
    """Euler-Maruyama for an Ito SDE on the grid of ``noise``."""
    if sde.form != "ito":
        raise ValueError("simulate_limit integrates the Ito form")
    _check_grid(cfg, noise)
    if noise.noise_dim != sde.noise_dim:
        raise ConfigError("noise dimension mismatch")
    x0 = np.asarray(cfg.x0, dtype=float).reshape(sde.dim)
    box = np.asarray(sde.box)
    h = noise.step
    n = noise.step_count

    def work(paths):
        dw = noise.increments(paths)
        P = len(paths)
        x = np.tile(x0, (P, 1))
        alive = np.ones(P, dtype=bool)
        exited = np.zeros(P, dtype=bool)
        failed = np.zeros(P, dtype=bool)
        exit_time = np.full(P, np.nan)
        rec = _Recorder(P, n, cfg.record_every, sde.dim, False)
        rec.store(0, x, None, alive)
        for step in range(n):
            with np.errstate(all="ignore"):
                x_new = x + sde.drift(x) * h + np.einsum("pij,pj->pi", sde.diffusion(x), dw[:, step])
            finite, inside = _advance_mask(x_new, x, box)
            newly_failed = alive & ~finite
            newly_exited = alive & finite & ~inside
            failed |= newly_failed
            exited |= newly_exited
            exit_time[newly_failed | newly_exited] = (step + 1) * h
            alive &= inside
            x = np.where(alive[:, None], x_new, x)
            rec.store(step + 1, x, None, alive)
        return {"x": rec.x, "exited": exited, "failed": failed, "exit_time": exit_time}

    parts = _run_batches(cfg, work)
    return _assemble("limit", None, cfg, noise, parts, False)


def _is_constant(model):
    if model.exprs is None:
        return False
    return not any(ex.depends_on(e) for key in ("F", "gamma", "sigma")
                   for row in model.exprs[key].entries for e in row)


def ou_transition(G, S, F, m, h):
    """Exact one-step law of ``(dx, v, W)`` for frozen coefficients.

    Augmented state ``z = (x - x_n, v, W, 1)`` of size ``2d + k + 1`` obeys
    ``dz = M z dt + B dW``.  Returns ``(Phi, Q)`` with ``z(h) = Phi z(0) +
    N(0, Q)``, using Van Loan's block exponential on a sub-step small enough
    to keep ``exp(+G h/m)`` tame, followed by repeated doubling.
    """
    G = np.asarray(G, dtype=float)
    batch = G.shape[:-2]
    d = G.shape[-1]
    k = S.shape[-1]
    n = 2 * d + k + 1
    M = np.zeros(batch + (n, n))
    M[..., :d, d:2 * d] = np.eye(d)
    M[..., d:2 * d, d:2 * d] = -G / m
    M[..., d:2 * d, n - 1] = F / m
    B = np.zeros(batch + (n, k))
    B[..., d:2 * d, :] = S / m
    B[..., 2 * d:2 * d + k, :] = np.eye(k)

    rate = np.abs(G).sum(axis=-2).max(axis=-1).max(initial=0.0) / m
    halvings = max(0, int(np.ceil(np.log2(max(rate * h, 1e-300)))))
    hs = h / 2 ** halvings
    vl = np.zeros(batch + (2 * n, 2 * n))
    vl[..., :n, :n] = -M * hs
    vl[..., :n, n:] = (B @ np.swapaxes(B, -1, -2)) * hs
    vl[..., n:, n:] = np.swapaxes(M, -1, -2) * hs
    E = mat_exp(vl)
    Phi = np.swapaxes(E[..., n:, n:], -1, -2)
    Q = Phi @ E[..., :n, n:]
    for _ in range(halvings):
        Q = Phi @ Q @ np.swapaxes(Phi, -1, -2) + Q
        Phi = Phi @ Phi
    Q = 0.5 * (Q + np.swapaxes(Q, -1, -2))
    return Phi, Q


def _psd_factor(C, context):
    w, V = np.linalg.eigh(C)
    scale = np.maximum(np.abs(w).max(axis=-1, keepdims=True), 1e-300)
    if np.any(w < -1e-8 * scale):
        bad = int(np.argmin((w / scale).min(axis=-1)))
        raise NumericalError(
            f"velocity increment covariance is not positive semidefinite ({context(bad)})")
    return V * np.sqrt(np.clip(w, 0.0, None))[..., None, :]


def _conditional_step(Phi, Q, v, dW, Z, d, k):
    """Sample ``(dx, v_new)`` given ``v`` and the realised increment ``dW``."""
    a = slice(0, 2 * d)
    b = slice(2 * d, 2 * d + k)
    z0 = np.concatenate([np.zeros_like(v), v, np.zeros(v.shape[:-1] + (k,)),
                         np.ones(v.shape[:-1] + (1,))], axis=-1)
    mean = np.einsum("...ij,...j->...i", Phi, z0)
    Qab = Q[..., a, b]
    Qbb = Q[..., b, b]
    gain = np.swapaxes(np.linalg.solve(Qbb, np.swapaxes(Qab, -1, -2)), -1, -2)
    cmean = mean[..., a] + np.einsum("...ij,...j->...i", gain, dW - mean[..., b])
    ccov = Q[..., a, a] - gain @ np.swapaxes(Qab, -1, -2)
    return cmean, ccov


def simulate_full(model, cfg, noise):
    """Integrate the inertial system ``dx = v dt, m dv = (F - gamma v) dt + sigma dW``."""
    m = cfg.mass
    if m is None:
        raise ConfigError("simulate_full needs cfg.mass")
    _check_grid(cfg, noise)
    if noise.noise_dim != model.noise_dim:
        raise ConfigError("noise dimension mismatch")
    d, k = model.dim, model.noise_dim
    x0 = np.asarray(cfg.x0, dtype=float).reshape(d)
    v0 = np.zeros(d) if cfg.v0 is None else np.asarray(cfg.v0, dtype=float).reshape(d)
    h = noise.step
    n = noise.step_count
    box = model.box
    constant = _is_constant(model)

    if cfg.scheme == "euler":
        pts = model.grid(5)
        gnorm = np.linalg.norm(model.gamma(pts), ord=2, axis=(-2, -1)).max()
        if h > 0.1 * m / gnorm:
            raise ConfigError(
                f"explicit Euler needs dt <= 0.1 m / |gamma| = {0.1 * m / gnorm:.3e}; got {h:.3e}")

    cached = {}

    def transition(x):
        if constant and "T" in cached:
            return cached["T"]
        G = model.gamma(x)
        out = ou_transition(G, model.sigma(x), model.F(x), m, h)
        if constant:
            cached["T"] = out
        return out

    def work(paths):
        dw = noise.increments(paths)
        P = len(paths)
        Z = noise.auxiliary(paths, 2 * d) if cfg.scheme == "splitting" else None
        x = np.tile(x0, (P, 1))
        v = np.tile(v0, (P, 1))
        alive = np.ones(P, dtype=bool)
        exited = np.zeros(P, dtype=bool)
        failed = np.zeros(P, dtype=bool)
        exit_time = np.full(P, np.nan)
        kmax = m * np.sum(v * v, axis=-1)
        rec = _Recorder(P, n, cfg.record_every, d, True)
        rec.store(0, x, v, alive)
        for step in range(n):
            with np.errstate(all="ignore"):
                if cfg.scheme == "splitting":
                    Phi, Q = transition(x[:1] if constant else x)
                    mean, cov = _conditional_step(Phi, Q, v, dw[:, step], Z[:, step], d, k)
                    L = _psd_factor(cov, lambda i: f"x={x[min(i, P - 1)].tolist()}")
                    y = mean + np.einsum("...ij,...j->...i", L, Z[:, step])
                    x_new = x + y[:, :d]
                    v_new = y[:, d:]
                else:
                    acc = model.F(x) - np.einsum("pij,pj->pi", model.gamma(x), v)
                    kick = np.einsum("pij,pj->pi", model.sigma(x), dw[:, step])
                    x_new = x + v * h
                    v_new = v + (acc * h + kick) / m
            finite, inside = _advance_mask(x_new, x, box)
            finite &= np.all(np.isfinite(v_new), axis=-1)
            newly_failed = alive & ~finite
            newly_exited = alive & finite & ~inside
            failed |= newly_failed
            exited |= newly_exited
            exit_time[newly_failed | newly_exited] = (step + 1) * h
            alive &= inside & finite
            x = np.where(alive[:, None], x_new, x)
            v = np.where(alive[:, None], v_new, v)
            kmax = np.where(alive, np.maximum(kmax, m * np.sum(v * v, axis=-1)), kmax)
            rec.store(step + 1, x, v, alive)
        return {"x": rec.x, "v": rec.v, "exited": exited, "failed": failed,
                "exit_time": exit_time, "kmax": kmax}

    parts = _run_batches(cfg, work)
    return _assemble("full", m, cfg, noise, parts, True)


def kinetic_energy_stats(ens):
    """Mean of ``m |v|^2`` over surviving paths at each recorded time."""
    if ens.kind != "full":
        raise ValueError("kinetic energy needs a full (inertial) ensemble")
    e = ens.mass * np.sum(ens.v ** 2, axis=-1)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)   # all paths gone
        return np.nanmean(np.where(ens.valid[:, None], e, np.nan), axis=0)


# -- export -----------------------------------------------------------------

def atomic_write(path, text):
    """Write ``text`` to ``path`` via a temporary file and rename."""
    path = os.fspath(path)
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_ensemble_csv(ens, path=None):
    """One row per (path, time): path, t, x..., [v...], exited.

    Returns the CSV text; also writes it atomically when ``path`` is given.
    """
    d = ens.x.shape[-1]
    header = ["path", "t"] + [f"x{i + 1}" for i in range(d)]
    if ens.v is not None:
        header += [f"v{i + 1}" for i in range(d)]
    header.append("exited")
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for p in range(ens.x.shape[0]):
        flag = int(ens.exited[p] or ens.failed[p])
        for r, t in enumerate(ens.times):
            if np.isnan(ens.x[p, r, 0]):
                break
            row = [p, repr(float(t))] + [repr(float(c)) for c in ens.x[p, r]]
            if ens.v is not None:
                row += [repr(float(c)) for c in ens.v[p, r]]
            row.append(flag)
            w.writerow(row)
    text = buf.getvalue()
    if path is not None:
        atomic_write(path, text)
    return text


def ensemble_summary(ens):
    """Per-time moments over surviving paths, as a JSON-ready dict."""
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        alive = ~np.isnan(ens.x[..., 0])
        mean = np.nanmean(ens.x, axis=0)
        var = np.nanvar(ens.x, axis=0)
    out = {
        "kind": ens.kind,
        "mass": ens.mass,
        "paths": int(ens.x.shape[0]),
        "exited": int(ens.exited.sum()),
        "failed": int(ens.failed.sum()),
        "slices": [
            {"t": float(t), "alive": int(alive[:, r].sum()),
             "mean": [float(c) for c in mean[r]], "var": [float(c) for c in var[r]]}
            for r, t in enumerate(ens.times)
        ],
    }
    if ens.kind == "full":
        ke = kinetic_energy_stats(ens)
        for r, s in enumerate(out["slices"]):
            s["kinetic"] = float(ke[r])
    return out


def summary_json(ens):
    return json.dumps(ensemble_summary(ens), indent=2, sort_keys=True)
