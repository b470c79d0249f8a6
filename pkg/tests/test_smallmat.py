import numpy as np
import pytest
import scipy.linalg
from hypothesis import given, settings
from hypothesis import strategies as st

from kramers.errors import LyapunovError
from kramers.smallmat import (
    gauss_solve,
    lyapunov_residual,
    mat_exp,
    min_sym_eig,
    solve_lyapunov_direct,
    solve_lyapunov_quadrature,
)


def random_stable(rng, d, floor=0.1):
    """Random g whose symmetric part has smallest eigenvalue >= floor."""
    m = rng.normal(size=(d, d))
    shift = floor - min_sym_eig(m) + rng.uniform(0, 1)
    return m + shift * np.eye(d)


def test_min_sym_eig_examples():
    assert min_sym_eig(np.array([[2.0]])) == 2.0
    assert min_sym_eig(np.array([[1.0, -1.0], [0.0, 1.0]])) == pytest.approx(0.5, abs=1e-14)
    assert min_sym_eig(np.eye(3)) == pytest.approx(1.0, abs=1e-14)


def test_min_sym_eig_rejects_non_square():
    with pytest.raises(ValueError):
        min_sym_eig(np.ones((2, 3)))


def test_min_sym_eig_batched():
    g = np.stack([np.eye(2) * 3, np.array([[1.0, -1.0], [0.0, 1.0]])])
    assert np.allclose(min_sym_eig(g), [3.0, 0.5])


def test_mat_exp_examples():
    assert np.abs(mat_exp(np.zeros((3, 3))) - np.eye(3)).max() <= 1e-15
    e = mat_exp(np.diag([-1.0, -2.0]))
    assert np.allclose(e, np.diag([np.exp(-1), np.exp(-2)]), rtol=1e-14, atol=0)
    assert np.allclose(mat_exp(np.array([[0.0, 1.0], [0.0, 0.0]])), [[1, 1], [0, 1]], atol=1e-15)


def test_mat_exp_matches_scipy():
    rng = np.random.default_rng(3)
    for d in (1, 2, 4, 7):
        for scale in (0.01, 1.0, 30.0):
            a = rng.normal(size=(d, d)) * scale
            ref = scipy.linalg.expm(a)
            assert np.allclose(mat_exp(a), ref, rtol=1e-11, atol=1e-12 * np.abs(ref).max())


def test_mat_exp_batch_uses_per_matrix_scaling():
    a = np.stack([np.eye(2) * 1e-3, np.eye(2) * 20.0])
    e = mat_exp(a)
    assert np.allclose(e[0], np.eye(2) * np.exp(1e-3), rtol=1e-14)
    assert np.allclose(e[1], np.eye(2) * np.exp(20.0), rtol=1e-12)


@settings(max_examples=200, deadline=None)
@given(st.integers(1, 6), st.integers(0, 2**32 - 1), st.floats(0.01, 5.0))
def test_mat_exp_inverse_property(d, seed, norm):
    rng = np.random.default_rng(seed)
    a = rng.normal(size=(d, d))
    a *= norm / np.abs(a).sum(axis=0).max()
    prod = mat_exp(a) @ mat_exp(-a)
    assert np.abs(prod - np.eye(d)).max() <= 1e-10


def test_gauss_solve_matches_numpy_and_detects_singularity():
    rng = np.random.default_rng(0)
    a = rng.normal(size=(5, 4, 4))
    b = rng.normal(size=(5, 4))
    assert np.allclose(gauss_solve(a, b), np.linalg.solve(a, b[..., None])[..., 0])
    with pytest.raises(LyapunovError):
        gauss_solve(np.array([[1.0, 2.0], [2.0, 4.0]]), np.ones(2))


def test_direct_examples():
    sol = solve_lyapunov_direct(np.array([[1.0]]), np.array([[2.0]]))
    assert sol.J[0, 0] == pytest.approx(1.0) and sol.method == "direct"
    g = np.array([[1.0, -1.0], [0.0, 1.0]])
    c = np.array([[0.0, 0.0], [0.0, 2.0]])
    sol = solve_lyapunov_direct(g, c)
    assert np.allclose(sol.J, [[0.5, 0.5], [0.5, 1.0]], atol=1e-12)
    assert sol.residual <= 1e-10
    cc = np.array([[2.0, 0.0], [0.0, 4.0]])
    sol = solve_lyapunov_direct(cc / 2.0, cc)
    assert np.allclose(sol.J, np.eye(2), atol=1e-12)


def test_quadrature_examples():
    sol = solve_lyapunov_quadrature(np.array([[1.0]]), np.array([[2.0]]))
    assert sol.J[0, 0] == pytest.approx(1.0, abs=1e-10)
    sol = solve_lyapunov_quadrature(np.diag([1.0, 2.0]), np.eye(2))
    assert np.allclose(sol.J, np.diag([0.5, 0.25]), atol=1e-10)
    assert sol.method == "quadrature"


def test_direct_singular_system_raises():
    # eigenvalues 1 and -1 make g kron I + I kron g singular
    with pytest.raises(LyapunovError):
        solve_lyapunov_direct(np.diag([1.0, -1.0]), np.eye(2))


def test_direct_rejects_non_finite_and_shape_mismatch():
    with pytest.raises(ValueError):
        solve_lyapunov_direct(np.array([[np.nan]]), np.array([[1.0]]))
    with pytest.raises(ValueError):
        solve_lyapunov_direct(np.eye(2), np.eye(3))


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 4), st.integers(0, 2**32 - 1))
def test_direct_and_quadrature_agree(d, seed):
    rng = np.random.default_rng(seed)
    g = random_stable(rng, d)
    b = rng.normal(size=(d, d))
    c = b @ b.T
    jd = solve_lyapunov_direct(g, c)
    jq = solve_lyapunov_quadrature(g, c)
    assert jd.residual <= 1e-10 * max(1.0, np.abs(c).max())
    assert jq.residual <= 1e-8 * max(1.0, np.abs(c).max())
    assert np.abs(jd.J - jq.J).max() <= 1e-8
    # symmetric c and positive-definite symmetric part give a symmetric J
    assert np.abs(jd.J - jd.J.T).max() <= 1e-10 * max(1.0, np.abs(c).max())


@settings(max_examples=100, deadline=None)
@given(st.integers(1, 5), st.integers(0, 2**32 - 1), st.floats(0.1, 5.0))
def test_antisymmetric_part_leaves_fdr_solution(d, seed, kT):
    rng = np.random.default_rng(seed)
    b = rng.normal(size=(d, d))
    g = b @ b.T + 0.5 * np.eye(d)
    h = rng.normal(size=(d, d))
    h = h - h.T
    sol = solve_lyapunov_direct(g + h, 2 * kT * g)
    assert np.abs(sol.J - kT * np.eye(d)).max() <= 1e-10 * max(1.0, kT * np.abs(g).max())
    assert lyapunov_residual(g + h, 2 * kT * g, kT * np.eye(d)) <= 1e-12 * max(1, np.abs(g).max())
