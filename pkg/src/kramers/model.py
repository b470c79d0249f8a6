"""Coefficient models ``(F, gamma, sigma)`` for inertial Langevin systems.

A :class:`CoefficientModel` describes

    dx = v dt,   m dv = [F(x) - gamma(x) v] dt + sigma(x) dW

on a rectangular domain box.  All coefficient callables are vectorised:
they take points of shape ``(..., d)`` and return ``(..., d)``,
``(..., d, d)`` and ``(..., d, k)`` arrays.  Derivative arrays put the
differentiation axis first after the batch axes, e.g. ``dgamma(x)[..., l,
i, j]`` is the partial of ``gamma_ij`` with respect to ``x_l``.
"""

import itertools
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from . import expr as ex
from .errors import AssumptionError, ConfigError
from .smallmat import min_sym_eig

__all__ = [
    "ExprMatrix",
    "CoefficientModel",
    "AssumptionReport",
    "ColoredNoiseSpec",
    "MagneticSpec",
    "check_assumptions",
    "lift_colored_noise",
    "augment_magnetic",
    "fdr_model",
    "magnetic_matrix",
]

_FD_STEP = np.finfo(float).eps ** (1.0 / 3.0)


class ExprMatrix:
    """A rectangular array of expressions evaluated as one numpy array."""

    def __init__(self, entries, dim):
        rows = [list(r) for r in entries]
        if not rows or any(len(r) != len(rows[0]) for r in rows):
            raise ConfigError("expression matrix rows must be non-empty and of equal length")
        self.dim = dim
        self.entries = [
            [e if not isinstance(e, (str, int, float)) else ex.parse(str(e), dim) for e in r]
            for r in rows
        ]
        self.shape = (len(rows), len(rows[0]))
        self._derivs = {}

    @classmethod
    def vector(cls, entries, dim):
        return cls([[e] for e in entries], dim)

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        out = np.empty(x.shape[:-1] + self.shape)
        for i, row in enumerate(self.entries):
            for j, e in enumerate(row):
                out[..., i, j] = ex.evaluate(e, x)
        return out

    def deriv(self, axis):
        """Entrywise partial derivative with respect to ``x{axis+1}`` (cached)."""
        if axis not in self._derivs:
            self._derivs[axis] = ExprMatrix(
                [[ex.deriv(e, axis + 1) for e in row] for row in self.entries], self.dim)
        return self._derivs[axis]

    def jacobian(self, x):
        """Array ``(..., d, rows, cols)`` of first partials."""
        return np.stack([self.deriv(l)(x) for l in range(self.dim)], axis=-3)

    def hessian(self, x):
        """Array ``(..., d, d, rows, cols)`` of second partials."""
        return np.stack(
            [np.stack([self.deriv(l).deriv(k)(x) for k in range(self.dim)], axis=-3)
             for l in range(self.dim)], axis=-4)

    def strings(self):
        return [[ex.to_string(e) for e in row] for row in self.entries]


def _fd_jacobian(fn, dim):
    """Central-difference jacobian of an array-valued ``fn``; axis goes first."""

    def jac(x):
        x = np.asarray(x, dtype=float)
        cols = []
        for l in range(dim):
            h = _FD_STEP * np.maximum(1.0, np.abs(x[..., l]))
            step = np.zeros_like(x)
            step[..., l] = h
            diff = fn(x + step) - fn(x - step)
            hb = (2.0 * h).reshape(h.shape + (1,) * (diff.ndim - h.ndim))
            cols.append(diff / hb)
        return np.stack(cols, axis=x.ndim - 1)

    return jac


@dataclass(frozen=True)
class CoefficientModel:
    """Friction, noise and force coefficients on a domain box.

    Expression-backed models (built with :meth:`from_expressions`) carry
    exact symbolic derivatives; models from plain callables fall back to
    central finite differences with step ``eps**(1/3) * max(1, |x_l|)``.
    """

    dim: int
    noise_dim: int
    F: Callable
    gamma: Callable
    sigma: Callable
    box: np.ndarray
    dgamma: Optional[Callable] = None
    dsigma: Optional[Callable] = None
    d2gamma: Optional[Callable] = None
    d2sigma: Optional[Callable] = None
    dF: Optional[Callable] = None
    name: str = ""
    exprs: Optional[dict] = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        box = np.asarray(self.box, dtype=float).reshape(self.dim, 2)
        if np.any(box[:, 0] >= box[:, 1]):
            raise ConfigError(f"domain box must have lo < hi on every axis: {box.tolist()}")
        object.__setattr__(self, "box", box)
        fill = {
            "dgamma": lambda: _fd_jacobian(self.gamma, self.dim),
            "dsigma": lambda: _fd_jacobian(self.sigma, self.dim),
            "dF": lambda: _fd_jacobian(self.F, self.dim),
        }
        for name, make in fill.items():
            if getattr(self, name) is None:
                object.__setattr__(self, name, make())
        if self.d2gamma is None:
            object.__setattr__(self, "d2gamma", _fd_jacobian(self.dgamma, self.dim))
        if self.d2sigma is None:
            object.__setattr__(self, "d2sigma", _fd_jacobian(self.dsigma, self.dim))

    @classmethod
    def from_expressions(cls, dim, F, gamma, sigma, box, name="", meta=None):
        """Build a model from expression strings (or parsed trees).

        ``F`` is a list of ``dim`` entries, ``gamma`` a ``dim x dim`` nested
        list and ``sigma`` a ``dim x k`` nested list.
        """
        Fm = ExprMatrix.vector(F, dim)
        gm = ExprMatrix(gamma, dim)
        sm = ExprMatrix(sigma, dim)
        if Fm.shape != (dim, 1):
            raise ConfigError(f"F must have {dim} entries, got {Fm.shape[0]}")
        if gm.shape != (dim, dim):
            raise ConfigError(f"gamma must be {dim}x{dim}, got {gm.shape[0]}x{gm.shape[1]}")
        if sm.shape[0] != dim:
            raise ConfigError(f"sigma must have {dim} rows, got {sm.shape[0]}")
        return cls(
            dim=dim,
            noise_dim=sm.shape[1],
            F=lambda x: Fm(x)[..., 0],
            gamma=gm,
            sigma=sm,
            box=box,
            dgamma=gm.jacobian,
            dsigma=sm.jacobian,
            d2gamma=gm.hessian,
            d2sigma=sm.hessian,
            dF=lambda x: Fm.jacobian(x)[..., 0],
            name=name,
            exprs={"F": Fm, "gamma": gm, "sigma": sm},
            meta=dict(meta or {}),
        )

    def contains(self, x):
        """Boolean mask of points lying inside the closed domain box."""
        x = np.asarray(x, dtype=float)
        return np.all((x >= self.box[:, 0]) & (x <= self.box[:, 1]), axis=-1)

    def grid(self, n):
        """Tensor grid with ``n`` points per axis, shape ``(n**d, d)``."""
        axes = [np.linspace(lo, hi, n) for lo, hi in self.box]
        return np.array(list(itertools.product(*axes)), dtype=float)


@dataclass(frozen=True)
class AssumptionReport:
    c_lambda_est: float
    c_lambda_point: tuple
    C_T_est: float
    samples: int
    floor: float
    passes: dict

    @property
    def ok(self):
        return all(self.passes.values())

    def to_dict(self):
        return {
            "c_lambda_est": self.c_lambda_est,
            "c_lambda_point": list(self.c_lambda_point),
            "C_T_est": self.C_T_est,
            "samples": self.samples,
            "floor": self.floor,
            "passes": dict(self.passes),
            "ok": self.ok,
        }


def _locate_failure(fn, pts):
    for p in pts:
        try:
            val = fn(p[None])
        except ex.ExprError:
            return p
        if not np.all(np.isfinite(val)):
            return p
    return pts[0]


def check_assumptions(model, n=11, floor=1e-6):
    """Sample ``model`` on a tensor grid and estimate ``c_lambda`` and ``C_T``.

    Raises :class:`AssumptionError` when a coefficient is non-finite (or
    outside its expression domain) at a grid point.
    """
    if n < 2:
        raise ValueError("need at least 2 grid points per axis")
    pts = model.grid(n)
    values = {}
    for name in ("F", "gamma", "sigma"):
        fn = getattr(model, name)
        try:
            val = fn(pts)
        except ex.ExprError as err:
            p = _locate_failure(fn, pts)
            raise AssumptionError(f"{name} not evaluable at {p.tolist()}: {err}") from err
        if not np.all(np.isfinite(val)):
            p = _locate_failure(fn, pts)
            raise AssumptionError(f"{name} is not finite at {p.tolist()}")
        values[name] = val
    lam = np.atleast_1d(min_sym_eig(values["gamma"]))
    k = int(np.argmin(lam))
    norms = [
        np.linalg.norm(values["F"], axis=-1).max(),
        np.linalg.norm(values["gamma"], ord=2, axis=(-2, -1)).max(),
        np.linalg.norm(values["sigma"], ord=2, axis=(-2, -1)).max(),
    ]
    return AssumptionReport(
        c_lambda_est=float(lam[k]),
        c_lambda_point=tuple(float(v) for v in pts[k]),
        C_T_est=float(max(norms)),
        samples=len(pts),
        floor=floor,
        passes={"friction_positive": bool(lam[k] > floor), "finite": True},
    )


# -- colored noise ----------------------------------------------------------

@dataclass(frozen=True)
class ColoredNoiseSpec:
    """OU noise ``d eta = -(A/tau) eta dt + (lam/tau) dW`` with ``tau = tau0 m``.

    ``coupling`` is the ``base_dim x k`` expression matrix through which
    ``eta`` enters the force.
    """

    base_dim: int
    A: np.ndarray
    lam: np.ndarray
    tau0: float
    coupling: list
    zeta_box: tuple = (-1e3, 1e3)

    def __post_init__(self):
        A = np.atleast_2d(np.asarray(self.A, dtype=float))
        lam = np.atleast_2d(np.asarray(self.lam, dtype=float))
        if A.shape[0] != A.shape[1] or lam.shape[0] != A.shape[0]:
            raise ConfigError(f"A must be k x k and lam k x l; got {A.shape}, {lam.shape}")
        if self.tau0 <= 0:
            raise ConfigError("tau0 must be positive")
        if np.any(np.linalg.eigvals(A).real <= 0):
            raise ConfigError("eigenvalues of A must have positive real part")
        coupling = [list(r) if isinstance(r, (list, tuple)) else [r] for r in self.coupling]
        if len(coupling) != self.base_dim or any(len(r) != A.shape[0] for r in coupling):
            raise ConfigError(
                f"coupling must be {self.base_dim} x {A.shape[0]} to match A")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "lam", lam)
        object.__setattr__(self, "coupling", coupling)


def _as_expr(e, dim):
    return e if not isinstance(e, (str, int, float)) else ex.parse(str(e), dim)


def lift_colored_noise(F, friction, spec, box, scale="1", name="colored-noise", meta=None):
    """Rewrite a system driven by OU noise as a white-noise model.

    The state becomes ``(x, zeta)`` with velocity ``(v, eta)`` and

        gamma = [[scale*friction, -scale*coupling], [0, A/tau0]]
        sigma = [[0], [lam/tau0]],   F = (scale*F, 0).

    ``F``, ``friction`` and ``scale`` are expressions over the base
    variables ``x1..xd``; the returned model lives in ``d + k`` dimensions.
    """
    d = spec.base_dim
    k = spec.A.shape[0]
    n = d + k
    F = [F] if not isinstance(F, (list, tuple)) else list(F)
    friction = [[friction]] if not isinstance(friction, (list, tuple)) else [
        list(r) if isinstance(r, (list, tuple)) else [r] for r in friction]
    if len(F) != d or len(friction) != d or any(len(r) != d for r in friction):
        raise ConfigError(f"base F/friction must match base dimension {d}")
    s = _as_expr(scale, d)
    gamma = [[ex.num(0)] * n for _ in range(n)]
    for i in range(d):
        for j in range(d):
            gamma[i][j] = ex.mul(s, _as_expr(friction[i][j], d))
        for j in range(k):
            gamma[i][d + j] = ex.neg(ex.mul(s, _as_expr(spec.coupling[i][j], d)))
    for i in range(k):
        for j in range(k):
            gamma[d + i][d + j] = ex.num(spec.A[i, j] / spec.tau0)
    ell = spec.lam.shape[1]
    sigma = [[ex.num(0)] * ell for _ in range(n)]
    for i in range(k):
        for j in range(ell):
            sigma[d + i][j] = ex.num(spec.lam[i, j] / spec.tau0)
    Fbar = [ex.mul(s, _as_expr(f, d)) for f in F] + [ex.num(0)] * k
    lifted_box = np.vstack([np.asarray(box, dtype=float).reshape(d, 2),
                            np.tile(np.asarray(spec.zeta_box, dtype=float), (k, 1))])
    return CoefficientModel.from_expressions(
        n, Fbar, gamma, sigma, lifted_box, name=name,
        meta=dict(meta or {}, colored_noise={"base_dim": d, "noise_dim": k, "tau0": spec.tau0}))


# -- magnetic field ---------------------------------------------------------

@dataclass(frozen=True)
class MagneticSpec:
    """Charge ``q`` and field ``B`` (three expressions in x1..x3, or a callable)."""

    q: float
    B: object


def magnetic_matrix(q, B):
    """Antisymmetric ``H`` with ``H v = -q v x B`` for field vectors ``B (..., 3)``."""
    B = np.asarray(B, dtype=float)
    H = np.zeros(B.shape[:-1] + (3, 3))
    H[..., 0, 1] = -B[..., 2]
    H[..., 0, 2] = B[..., 1]
    H[..., 1, 0] = B[..., 2]
    H[..., 1, 2] = -B[..., 0]
    H[..., 2, 0] = -B[..., 1]
    H[..., 2, 1] = B[..., 0]
    return q * H


def augment_magnetic(model, spec):
    """Fold the Lorentz force ``q v x B`` into the friction: ``gamma + H``."""
    if model.dim != 3:
        raise ConfigError("magnetic augmentation needs a three-dimensional model")
    q = float(spec.q)
    if callable(spec.B) or model.exprs is None:
        Bfn = spec.B if callable(spec.B) else ExprMatrix.vector(spec.B, 3)
        field_at = (lambda x: Bfn(x)[..., 0]) if isinstance(Bfn, ExprMatrix) else Bfn
        gamma = model.gamma
        return CoefficientModel(
            dim=3, noise_dim=model.noise_dim, F=model.F,
            gamma=lambda x: gamma(x) + magnetic_matrix(q, field_at(x)),
            sigma=model.sigma, box=model.box, dsigma=model.dsigma,
            d2sigma=model.d2sigma, dF=model.dF, name=model.name + "+magnetic",
            meta=dict(model.meta, magnetic={"q": q}))
    B = [_as_expr(b, 3) for b in spec.B]
    if len(B) != 3:
        raise ConfigError("B must have three components")
    qn = ex.num(q)
    # rows of -q [v]_x B written as H entries
    H = [
        [ex.num(0), ex.neg(ex.mul(qn, B[2])), ex.mul(qn, B[1])],
        [ex.mul(qn, B[2]), ex.num(0), ex.neg(ex.mul(qn, B[0]))],
        [ex.neg(ex.mul(qn, B[1])), ex.mul(qn, B[0]), ex.num(0)],
    ]
    g = model.exprs["gamma"].entries
    gamma = [[ex.add(g[i][j], H[i][j]) for j in range(3)] for i in range(3)]
    return CoefficientModel.from_expressions(
        3, [r[0] for r in model.exprs["F"].entries],
        gamma, model.exprs["sigma"].entries, model.box,
        name=model.name + "+magnetic", meta=dict(model.meta, magnetic={"q": q}))


# -- fluctuation-dissipation models -----------------------------------------

FDR_CONVENTIONS = {
    # sigma sigma^T = 2 kT gamma  (Einstein relation; 1D diffusion-gradient form)
    "2kT": 2.0,
    # gamma = sigma sigma^T / kT
    "kT": 1.0,
}


def fdr_model(convention, kT, box, D=None, sigma=None, F=None, U=None, name="fdr", n_check=101):
    """Build a model whose friction and noise obey a fluctuation-dissipation tie.

    ``convention`` is required: ``"2kT"`` means ``sigma sigma^T = 2 kT gamma``
    and ``"kT"`` means ``gamma = sigma sigma^T / kT``.  Give either a scalar
    diffusion expression ``D`` (one dimension; ``gamma = kT / D``) or a noise
    matrix ``sigma`` (any dimension; ``gamma`` follows from the convention).
    The force is ``F`` or, when a potential ``U`` is given, ``-grad U``.
    """
    if convention not in FDR_CONVENTIONS:
        raise ConfigError(f"unknown FDR convention {convention!r}; use one of {sorted(FDR_CONVENTIONS)}")
    if kT <= 0:
        raise ConfigError("kT must be positive")
    if (D is None) == (sigma is None):
        raise ConfigError("give exactly one of D or sigma")
    if (F is None) == (U is None):
        raise ConfigError("give exactly one of F or U")
    c = FDR_CONVENTIONS[convention]
    kTn = ex.num(kT)
    if D is not None:
        dim = 1
        De = _as_expr(D, 1)
        box = np.asarray(box, dtype=float).reshape(1, 2)
        xs = np.linspace(box[0, 0], box[0, 1], n_check)[:, None]
        try:
            Dv = ex.evaluate(De, xs)
        except ex.ExprError as err:
            raise AssumptionError(f"D not evaluable on the box: {err}") from err
        if np.any(Dv <= 0):
            bad = float(xs[np.argmax(Dv <= 0), 0])
            raise AssumptionError(f"D(x) must be positive on the box; D({bad:g}) = {ex.evaluate(De, [bad]):g}")
        gamma = [[ex.div(kTn, De)]]
        sig = [[ex.mul(kTn, ex.call("sqrt", ex.div(ex.num(c), De)))]]
    else:
        sig = [[_as_expr(e, len(sigma)) for e in row] for row in sigma]
        dim = len(sig)
        scale = ex.num(1.0 / (c * kT))
        gamma = [[None] * dim for _ in range(dim)]
        for i in range(dim):
            for j in range(dim):
                acc = ex.num(0)
                for k in range(len(sig[i])):
                    acc = ex.add(acc, ex.mul(sig[i][k], sig[j][k]))
                gamma[i][j] = ex.mul(scale, acc)
    if U is not None:
        Ue = _as_expr(U, dim)
        force = [ex.neg(ex.deriv(Ue, i + 1)) for i in range(dim)]
    else:
        force = [_as_expr(f, dim) for f in (F if isinstance(F, (list, tuple)) else [F])]
    meta = {"fdr": {"convention": convention, "kT": float(kT),
                    "U": ex.to_string(Ue) if U is not None else None}}
    if D is not None:
        meta["fdr"]["D"] = ex.to_string(De)
    return CoefficientModel.from_expressions(dim, force, gamma, sig, box, name=name, meta=meta)
