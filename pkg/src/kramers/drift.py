"""The small-mass limiting SDE and its noise-induced drift.

For a model ``(F, gamma, sigma)`` the limit is the Ito SDE

    dx = [gamma^{-1} F + S] dt + gamma^{-1} sigma dW,
    S_i = d/dx_l [(gamma^{-1})_ij] J_jl,   J gamma^T + gamma J = sigma sigma^T.

Everything is vectorised over leading batch axes of ``x``.
"""

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from . import expr as ex
from .errors import AssumptionError, ConfigError
from .smallmat import lyapunov_direct_batch

__all__ = [
    "LimitSde",
    "noise_induced_drift",
    "limit_sde",
    "ito_to_stratonovich",
    "stratonovich_to_ito",
    "stratonovich_correction",
    "commutes",
    "gibbs_drift_check",
    "symbolic_1d",
]

COMMUTATOR_TOL = 1e-8


def _T(a):
    return np.swapaxes(a, -1, -2)


def _inverse_and_derivative(model, x):
    g = model.gamma(x)
    ginv = np.linalg.inv(g)
    dg = model.dgamma(x)
    dginv = -ginv[..., None, :, :] @ dg @ ginv[..., None, :, :]
    return g, ginv, dginv


def noise_induced_drift(model, x, check=True, floor=1e-12):
    """Noise-induced drift ``S(x)`` at a point or a batch of points."""
    x = np.asarray(x, dtype=float)
    g, _, dginv = _inverse_and_derivative(model, x)
    if check:
        # Lyapunov solvability only needs eigenvalues in the right half plane
        lam = np.linalg.eigvals(g).real.min()
        if lam <= floor:
            raise AssumptionError(
                f"gamma has an eigenvalue with real part {lam:.3e} <= {floor:g}")
    s = model.sigma(x)
    J, _ = lyapunov_direct_batch(g, s @ _T(s))
    return np.einsum("...lij,...jl->...i", dginv, J)


@dataclass(frozen=True)
class LimitSde:
    """``dx = drift(x) dt + diffusion(x) dW`` in Ito or Stratonovich form.

    ``diffusion_jacobian(x)[..., k, i, j]`` is ``d h_ij / d x_k``; it is what
    the Ito/Stratonovich conversion needs.
    """

    dim: int
    noise_dim: int
    form: str
    drift: Callable
    diffusion: Callable
    diffusion_jacobian: Callable
    box: np.ndarray
    model: Optional[object] = None
    meta: dict = field(default_factory=dict)


def stratonovich_correction(sde, x):
    """``-1/2 (d_k h_ij) h_kj`` at ``x``."""
    h = sde.diffusion(x)
    dh = sde.diffusion_jacobian(x)
    return -0.5 * np.einsum("...kij,...kj->...i", dh, h)


def ito_to_stratonovich(sde):
    if sde.form != "ito":
        raise ValueError("expected an Ito SDE")
    b = sde.drift

    def drift(x):
        return b(x) + stratonovich_correction(sde, x)

    return LimitSde(sde.dim, sde.noise_dim, "stratonovich", drift, sde.diffusion,
                    sde.diffusion_jacobian, sde.box, sde.model, dict(sde.meta, conversion="general"))


def stratonovich_to_ito(sde):
    if sde.form != "stratonovich":
        raise ValueError("expected a Stratonovich SDE")
    b = sde.drift

    def drift(x):
        return b(x) - stratonovich_correction(sde, x)

    return LimitSde(sde.dim, sde.noise_dim, "ito", drift, sde.diffusion,
                    sde.diffusion_jacobian, sde.box, sde.model, dict(sde.meta))


def commutes(model, n=5, tol=COMMUTATOR_TOL):
    """True when gamma is symmetric and commutes with sigma on a sample grid."""
    if model.noise_dim != model.dim:
        return False
    pts = model.grid(n)
    g = model.gamma(pts)
    s = model.sigma(pts)
    asym = np.abs(g - _T(g)).max()
    comm = np.abs(g @ s - s @ g).max()
    return bool(asym <= tol and comm <= tol)


def limit_sde(model, form="ito", include_noise_drift=True, method="auto"):
    """Assemble the limiting SDE of ``model``.

    ``form="stratonovich"`` uses the closed drift ``gamma^{-1} F + S_bar``
    when gamma is symmetric and commutes with sigma (``method="commuting"``
    insists on it), and otherwise converts the Ito form term by term
    (``method="general"``).  ``include_noise_drift=False`` drops ``S``; it
    exists to show that the drift is not optional.
    """
    if form not in ("ito", "stratonovich"):
        raise ValueError(f"unknown form {form!r}")
    if method not in ("auto", "commuting", "general"):
        raise ValueError(f"unknown method {method!r}")

    def diffusion(x):
        return np.linalg.solve(model.gamma(x), model.sigma(x))

    def diffusion_jacobian(x):
        _, ginv, dginv = _inverse_and_derivative(model, x)
        s = model.sigma(x)
        ds = model.dsigma(x)
        return dginv @ s[..., None, :, :] + ginv[..., None, :, :] @ ds

    def ito_drift(x):
        x = np.asarray(x, dtype=float)
        b = np.linalg.solve(model.gamma(x), model.F(x)[..., None])[..., 0]
        if include_noise_drift:
            b = b + noise_induced_drift(model, x, check=False)
        return b

    meta = {"include_noise_drift": include_noise_drift}
    ito = LimitSde(model.dim, model.noise_dim, "ito", ito_drift, diffusion,
                   diffusion_jacobian, model.box, model, meta)
    if form == "ito":
        return ito

    use_shortcut = method == "commuting" or (method == "auto" and commutes(model))
    if method == "commuting" and not commutes(model):
        raise AssumptionError("gamma is not symmetric or does not commute with sigma")
    if not use_shortcut or not include_noise_drift:
        return ito_to_stratonovich(ito)

    def strat_drift(x):
        x = np.asarray(x, dtype=float)
        g = model.gamma(x)
        ginv = np.linalg.inv(g)
        s = model.sigma(x)
        ds = model.dsigma(x)
        sbar = -0.5 * np.einsum("...il,...klj,...km,...mj->...i", ginv, ds, ginv, s)
        return (ginv @ model.F(x)[..., None])[..., 0] + sbar

    return LimitSde(model.dim, model.noise_dim, "stratonovich", strat_drift, diffusion,
                    diffusion_jacobian, model.box, model, dict(meta, conversion="commuting"))


def _fdr_temperature(model, kT):
    info = model.meta.get("fdr")
    if kT is None:
        if info is None:
            raise ConfigError("model was not built by fdr_model; pass kT explicitly")
        kT = info["kT"]
    # gamma = sigma sigma^T / kT puts the noise at temperature kT / 2
    if info is not None and info["convention"] == "kT":
        return kT / 2.0
    return kT


def gibbs_drift_check(model, U, x, kT=None, include_noise_drift=True, drift_sign=1.0,
                      force_tol=1e-9):
    """Stationary Fokker-Planck residual of the limit against ``exp(-U/kT)``.

    Returns ``|sum_i [-d_i(b_i rho) + 1/2 d_i d_j(a_ij rho)]|`` with
    ``a = h h^T`` and unnormalised ``rho = exp(-U/kT_noise)``, computed from
    exact derivatives (no differencing).  ``drift_sign`` multiplies ``S``;
    ``-1`` reproduces the alternative sign reading of the FDR limit.
    """
    x = np.asarray(x, dtype=float)
    d = model.dim
    Ue = U if not isinstance(U, str) else ex.parse(U, d)
    theta = _fdr_temperature(model, kT)

    dU = np.stack([ex.evaluate(ex.deriv(Ue, i + 1), x) for i in range(d)], axis=-1)
    d2U = np.stack([np.stack([ex.evaluate(ex.deriv(ex.deriv(Ue, i + 1), j + 1), x)
                              for j in range(d)], axis=-1) for i in range(d)], axis=-2)
    F = model.F(x)
    if np.abs(F + dU).max() > force_tol * max(1.0, np.abs(dU).max()):
        raise ConfigError("model force is not -grad U for the supplied potential")

    g = model.gamma(x)
    G = np.linalg.inv(g)
    dg = model.dgamma(x)                     # (..., k, i, j)
    d2g = model.d2gamma(x)                   # (..., k, l, i, j)
    s = model.sigma(x)
    ds = model.dsigma(x)
    d2s = model.d2sigma(x)
    dF = model.dF(x)                         # (..., k, i)

    Gk = G[..., None, :, :]
    Gkl = G[..., None, None, :, :]
    dG = -Gk @ dg @ Gk
    dgk = dg[..., :, None, :, :]
    dgl = dg[..., None, :, :, :]
    d2G = Gkl @ (dgk @ Gkl @ dgl + dgl @ Gkl @ dgk - d2g) @ Gkl

    C = s @ _T(s)
    dC = ds @ _T(s)[..., None, :, :] + s[..., None, :, :] @ _T(ds)
    dsk = ds[..., :, None, :, :]
    dsl = ds[..., None, :, :, :]
    sT = _T(s)[..., None, None, :, :]
    d2C = (d2s @ sT + dsk @ _T(dsl) + dsl @ _T(dsk) + s[..., None, None, :, :] @ _T(d2s))

    J, _ = lyapunov_direct_batch(g, C)
    rhs = dC - J[..., None, :, :] @ _T(dg) - dg @ J[..., None, :, :]
    dJ, _ = lyapunov_direct_batch(np.broadcast_to(g[..., None, :, :], rhs.shape), rhs)

    # drift and its divergence
    b = np.einsum("...ij,...j->...i", G, F)
    div_b = np.einsum("...iij,...j->...", dG, F) + np.einsum("...ij,...ij->...", G, dF)
    if include_noise_drift:
        S = np.einsum("...lij,...jl->...i", dG, J)
        div_S = (np.einsum("...ilij,...jl->...", d2G, J)
                 + np.einsum("...lij,...ijl->...", dG, dJ))
        b = b + drift_sign * S
        div_b = div_b + drift_sign * div_S

    # diffusion matrix a = G C G^T and its derivatives
    GT = _T(G)
    a = G @ C @ GT
    da = dG @ C[..., None, :, :] @ GT[..., None, :, :] \
        + Gk @ dC @ GT[..., None, :, :] + Gk @ C[..., None, :, :] @ _T(dG)
    dGk, dGl = dG[..., :, None, :, :], dG[..., None, :, :, :]
    dCk, dCl = dC[..., :, None, :, :], dC[..., None, :, :, :]
    Cb = C[..., None, None, :, :]
    GTb = GT[..., None, None, :, :]
    d2a = (d2G @ Cb @ GTb + Gkl @ d2C @ GTb + Gkl @ Cb @ _T(d2G)
           + dGk @ dCl @ GTb + dGl @ dCk @ GTb
           + dGk @ Cb @ _T(dGl) + dGl @ Cb @ _T(dGk)
           + Gkl @ dCk @ _T(dGl) + Gkl @ dCl @ _T(dGk))

    div_a = np.einsum("...jij->...i", da)            # sum_j d_j a_ij
    ddiv_a = np.einsum("...ijij->...", d2a)          # sum_ij d_i d_j a_ij

    gflux = b - 0.5 * div_a + 0.5 * np.einsum("...ij,...j->...i", a, dU) / theta
    div_g = (div_b - 0.5 * ddiv_a
             + 0.5 * (np.einsum("...iij,...j->...", da, dU)
                      + np.einsum("...ij,...ij->...", a, d2U)) / theta)
    rho = np.exp(-ex.evaluate(Ue, x) / theta)
    return np.abs(rho * (div_g - np.einsum("...i,...i->...", gflux, dU) / theta))


def symbolic_1d(model):
    """Closed-form expressions for a one-dimensional expression-backed model.

    Returns strings for ``S = -gamma' sigma^2 / (2 gamma^3)``, the Ito drift
    ``F/gamma + S``, the diffusion ``sigma/gamma`` and the Stratonovich drift
    ``F/gamma - sigma sigma' / (2 gamma^2)``.
    """
    if model.dim != 1 or model.noise_dim != 1 or model.exprs is None:
        raise ValueError("symbolic formulas need a 1D expression-backed model")
    F = model.exprs["F"].entries[0][0]
    g = model.exprs["gamma"].entries[0][0]
    s = model.exprs["sigma"].entries[0][0]
    dg = ex.deriv(g, 1)
    ds = ex.deriv(s, 1)
    S = ex.neg(ex.div(ex.mul(dg, ex.power(s, ex.num(2))),
                      ex.mul(ex.num(2), ex.power(g, ex.num(3)))))
    b = ex.add(ex.div(F, g), S)
    h = ex.div(s, g)
    strat = ex.sub(ex.div(F, g), ex.div(ex.mul(s, ds), ex.mul(ex.num(2), ex.power(g, ex.num(2)))))
    return {
        "S": ex.to_string(S),
        "ito_drift": ex.to_string(b),
        "diffusion": ex.to_string(h),
        "stratonovich_drift": ex.to_string(strat),
    }
