"""Dense linear algebra for small matrices.

Everything here works on plain ``numpy`` arrays.  Most routines accept a
leading batch shape, ``(..., n, n)``, because the integrators evaluate the
same operation at every path of an ensemble at once.
"""

from dataclasses import dataclass

import numpy as np

from .errors import LyapunovError, QuadratureError

__all__ = [
    "LyapunovSolution",
    "min_sym_eig",
    "mat_exp",
    "gauss_solve",
    "lyapunov_residual",
    "lyapunov_direct_batch",
    "solve_lyapunov_direct",
    "solve_lyapunov_quadrature",
    "DIRECT_TOL",
    "QUADRATURE_TOL",
]

DIRECT_TOL = 1e-10
QUADRATURE_TOL = 1e-8


@dataclass(frozen=True)
class LyapunovSolution:
    """Solution ``J`` of ``J g^T + g J = c`` with its max-abs residual."""

    J: np.ndarray
    residual: float
    method: str


def _as_square(a, name="matrix"):
    a = np.asarray(a, dtype=float)
    if a.ndim < 2 or a.shape[-1] != a.shape[-2]:
        raise ValueError(f"{name} must be square, got shape {a.shape}")
    return a


def _require_finite(a, name):
    if not np.all(np.isfinite(a)):
        raise ValueError(f"{name} has non-finite entries")


def min_sym_eig(g):
    """Smallest eigenvalue of the symmetric part ``(g + g^T)/2``."""
    g = _as_square(g, "g")
    _require_finite(g, "g")
    sym = 0.5 * (g + np.swapaxes(g, -1, -2))
    if g.shape[-1] == 1:
        return sym[..., 0, 0]
    return np.linalg.eigvalsh(sym)[..., 0]


# Pade(13) coefficients and the matching norm bound, Higham (2005).
_PADE13 = np.array([
    64764752532480000.0, 32382376266240000.0, 7771770303897600.0,
    1187353796428800.0, 129060195264000.0, 10559470521600.0,
    670442572800.0, 33522128640.0, 1323241920.0, 40840800.0,
    960960.0, 16380.0, 182.0, 1.0,
])
_THETA13 = 5.371920351148152


def mat_exp(a):
    """Matrix exponential by scaling and squaring with a degree-13 Pade core.

    Works on a single matrix or a stack ``(..., n, n)``; each matrix in the
    stack gets its own scaling exponent.
    """
    a = _as_square(a, "a")
    _require_finite(a, "a")
    n = a.shape[-1]
    batch = a.shape[:-2]
    a = a.reshape((-1, n, n))
    norm1 = np.abs(a).sum(axis=-2).max(axis=-1)
    s = np.zeros(len(a), dtype=int)
    big = norm1 > _THETA13
    s[big] = np.ceil(np.log2(norm1[big] / _THETA13)).astype(int)
    a = a / (2.0 ** s)[:, None, None]

    b = _PADE13
    ident = np.broadcast_to(np.eye(n), a.shape)
    a2 = a @ a
    a4 = a2 @ a2
    a6 = a4 @ a2
    u = a @ (a6 @ (b[13] * a6 + b[11] * a4 + b[9] * a2)
             + b[7] * a6 + b[5] * a4 + b[3] * a2 + b[1] * ident)
    v = (a6 @ (b[12] * a6 + b[10] * a4 + b[8] * a2)
         + b[6] * a6 + b[4] * a4 + b[2] * a2 + b[0] * ident)
    r = np.linalg.solve(v - u, v + u)

    for k in range(int(s.max()) if len(s) else 0):
        todo = s > k
        r[todo] = r[todo] @ r[todo]
    return r.reshape(batch + (n, n))


def gauss_solve(a, b):
    """Solve ``a x = b`` by Gaussian elimination with partial pivoting.

    ``a`` has shape ``(..., n, n)`` and ``b`` shape ``(..., n)``.  Raises
    :class:`LyapunovError` when a pivot vanishes relative to the row scale.
    """
    a = np.array(a, dtype=float)
    b = np.array(b, dtype=float)
    n = a.shape[-1]
    batch = a.shape[:-2]
    a = a.reshape((-1, n, n))
    b = np.broadcast_to(b, batch + (n,)).reshape((-1, n)).copy()
    rows = np.arange(len(a))
    scale = np.abs(a).max(axis=(-1, -2))
    scale[scale == 0] = 1.0

    for col in range(n):
        piv = col + np.argmax(np.abs(a[:, col:, col]), axis=1)
        if np.any(np.abs(a[rows, piv, col]) <= 1e-14 * scale):
            raise LyapunovError("singular linear system in Gaussian elimination")
        swap = piv != col
        if np.any(swap):
            r, p = rows[swap], piv[swap]
            a[r, col], a[r, p] = a[r, p].copy(), a[r, col].copy()
            b[r, col], b[r, p] = b[r, p].copy(), b[r, col].copy()
        factors = a[:, col + 1:, col] / a[:, col, col][:, None]
        a[:, col + 1:, col:] -= factors[:, :, None] * a[:, None, col, col:]
        b[:, col + 1:] -= factors * b[:, col][:, None]

    x = np.empty_like(b)
    for row in range(n - 1, -1, -1):
        acc = b[:, row] - np.einsum("bj,bj->b", a[:, row, row + 1:], x[:, row + 1:])
        x[:, row] = acc / a[:, row, row]
    return x.reshape(batch + (n,))


def lyapunov_residual(g, c, j):
    """Max-abs entry of ``j g^T + g j - c`` (per batch element)."""
    r = j @ np.swapaxes(g, -1, -2) + g @ j - c
    return np.abs(r).max(axis=(-1, -2))


def lyapunov_direct_batch(g, c):
    """Batched direct solve of ``J g^T + g J = c``.

    Returns ``(J, residual)`` arrays.  The equation is vectorised row-major
    into ``(g kron I + I kron g) vec(J) = vec(c)`` and solved with
    :func:`gauss_solve`.
    """
    g = _as_square(g, "g")
    c = _as_square(c, "c")
    d = g.shape[-1]
    batch = np.broadcast_shapes(g.shape[:-2], c.shape[:-2])
    g = np.broadcast_to(g, batch + (d, d))
    c = np.broadcast_to(c, batch + (d, d))
    if d == 1:
        j = c / (2.0 * g)
    else:
        eye = np.eye(d)
        k = (np.einsum("...ik,jl->...ijkl", g, eye)
             + np.einsum("ik,...jl->...ijkl", eye, g))
        k = k.reshape(batch + (d * d, d * d))
        j = gauss_solve(k, c.reshape(batch + (d * d,))).reshape(batch + (d, d))
    res = lyapunov_residual(g, c, j)
    tol = DIRECT_TOL * np.maximum(1.0, np.abs(c).max(axis=(-1, -2)))
    if not np.all(np.isfinite(j)):
        raise LyapunovError("Lyapunov solve produced non-finite entries")
    if np.any(res > tol):
        raise LyapunovError(f"Lyapunov residual {np.max(res):.3e} above tolerance")
    return j, res


def solve_lyapunov_direct(g, c):
    """Solve ``J g^T + g J = c`` for a single pair by Kronecker vectorisation."""
    g = _as_square(g, "g")
    c = _as_square(c, "c")
    if g.shape != c.shape:
        raise ValueError(f"shape mismatch: g {g.shape} vs c {c.shape}")
    _require_finite(g, "g")
    _require_finite(c, "c")
    j, res = lyapunov_direct_batch(g, c)
    return LyapunovSolution(J=j, residual=float(res), method="direct")


# Gauss-Kronrod 7/15 nodes and weights on [-1, 1].
_XGK = np.array([
    0.991455371120812639206854697526329, 0.949107912342758524526189684047851,
    0.864864423359769072789712788640926, 0.741531185599394439863864773280788,
    0.586087235467691130294144845693013, 0.405845151377397166906606412076961,
    0.207784955007898467600689403773245, 0.000000000000000000000000000000000,
])
_WGK = np.array([
    0.022935322010529224963732008058970, 0.063092092629978553290700663189204,
    0.104790010322250183839876322541518, 0.140653259715525918745189590510238,
    0.169004726639267902826583426598550, 0.190350578064785409913256402421014,
    0.204432940075298892414161999234649, 0.209482141084727828012999174891714,
])
_WG = np.array([
    0.129484966168869693270611432679082, 0.279705391489276667901467771423780,
    0.381830050505118944950369775488975, 0.417959183673469387755102040816327,
])
_NODES = np.concatenate([-_XGK[:-1], _XGK[::-1]])
_KWEIGHTS = np.concatenate([_WGK[:-1], _WGK[::-1]])
# Gauss points sit at the odd Kronrod indices 1, 3, 5, 7(centre), 9, 11, 13.
_GWEIGHTS = np.zeros(15)
_GWEIGHTS[1::2] = np.concatenate([_WG[:-1], _WG[::-1]])


def _gk15(f, lo, hi):
    half = 0.5 * (hi - lo)
    vals = f(0.5 * (hi + lo) + half * _NODES)
    kron = half * np.tensordot(_KWEIGHTS, vals, axes=1)
    gauss = half * np.tensordot(_GWEIGHTS, vals, axes=1)
    return kron, np.abs(kron - gauss).max()


def solve_lyapunov_quadrature(g, c, max_intervals=4000):
    """Solve ``J g^T + g J = c`` as ``J = int_0^inf e^{-gy} c e^{-g^T y} dy``.

    The integral is truncated at ``40 / c_lambda`` and evaluated by globally
    adaptive Gauss-Kronrod (7/15) bisection.  Independent of the direct
    solver; meant as its oracle.
    """
    g = _as_square(g, "g")
    c = _as_square(c, "c")
    if g.shape != c.shape or g.ndim != 2:
        raise ValueError(f"expected two matrices of equal shape, got {g.shape}, {c.shape}")
    _require_finite(g, "g")
    _require_finite(c, "c")
    c_lam = float(min_sym_eig(g))
    if c_lam <= 0:
        raise QuadratureError(f"symmetric part of g is not positive definite (min eig {c_lam:.3e})")
    y_max = 40.0 / c_lam

    def integrand(y):
        e = mat_exp(-g[None] * y[:, None, None])
        return e @ c @ np.swapaxes(e, -1, -2)

    tol = 1e-12 * max(1.0, np.abs(c).max() / c_lam)
    floor = y_max * 2.0 ** -40
    edges = np.linspace(0.0, y_max, 9)
    pieces = []
    for lo, hi in zip(edges[:-1], edges[1:]):
        val, err = _gk15(integrand, lo, hi)
        pieces.append([err, lo, hi, val])
    while True:
        total_err = sum(p[0] for p in pieces)
        if total_err <= tol:
            break
        if len(pieces) >= max_intervals:
            raise QuadratureError(f"quadrature did not converge (error {total_err:.3e})")
        worst = max(range(len(pieces)), key=lambda i: pieces[i][0])
        _, lo, hi, _ = pieces.pop(worst)
        if hi - lo < floor:
            raise QuadratureError("quadrature interval halving floor reached")
        mid = 0.5 * (lo + hi)
        for a, b in ((lo, mid), (mid, hi)):
            val, err = _gk15(integrand, a, b)
            pieces.append([err, a, b, val])
    j = sum(p[3] for p in sorted(pieces, key=lambda p: p[1]))
    if np.array_equal(c, c.T):
        j = 0.5 * (j + j.T)
    res = float(lyapunov_residual(g, c, j))
    if res > QUADRATURE_TOL * max(1.0, np.abs(c).max()):
        raise QuadratureError(f"quadrature residual {res:.3e} above tolerance")
    return LyapunovSolution(J=j, residual=res, method="quadrature")
