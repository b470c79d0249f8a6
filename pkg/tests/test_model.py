import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from kramers.errors import AssumptionError, ConfigError
from kramers.model import (
    CoefficientModel,
    ColoredNoiseSpec,
    MagneticSpec,
    augment_magnetic,
    check_assumptions,
    fdr_model,
    lift_colored_noise,
    magnetic_matrix,
)


def model_1d(gamma, sigma="1", F="0", box=(-math.pi, math.pi)):
    return CoefficientModel.from_expressions(1, [F], [[gamma]], [[sigma]], [box])


def test_check_assumptions_examples():
    rep = check_assumptions(model_1d("2 + sin(x1)"), n=41)
    # grid point nearest -pi/2 on a 41-point grid over [-pi, pi] is exactly -pi/2
    assert rep.c_lambda_est == pytest.approx(1.0, abs=1e-12)
    assert rep.c_lambda_point[0] == pytest.approx(-math.pi / 2)
    assert rep.ok
    eye = CoefficientModel.from_expressions(2, ["0", "0"], [["1", "0"], ["0", "1"]],
                                            [["1"], ["0"]], [[-1, 1], [-1, 1]])
    assert check_assumptions(eye, n=3).c_lambda_est == 1.0
    bad = check_assumptions(model_1d("x1", box=(-1, 1)), n=5)
    assert not bad.ok and bad.c_lambda_est < 0
    assert bad.passes["friction_positive"] is False


def test_check_assumptions_reports_the_offending_point():
    with pytest.raises(AssumptionError, match=r"gamma.*\[0\.0\]"):
        check_assumptions(model_1d("1/x1", box=(-1, 1)), n=5)
    with pytest.raises(AssumptionError, match="sigma"):
        check_assumptions(model_1d("1", sigma="sqrt(x1)", box=(-1, 1)), n=5)


def test_check_assumptions_bounds():
    rep = check_assumptions(model_1d("2 + sin(x1)", sigma="3", F="x1"), n=21)
    assert rep.C_T_est == pytest.approx(max(3.0, math.pi, 3.0))
    assert rep.samples == 21
    with pytest.raises(ValueError):
        check_assumptions(model_1d("1"), n=1)


def test_bad_box_rejected():
    with pytest.raises(ConfigError):
        model_1d("1", box=(1, -1))


def test_expression_derivatives_match_finite_differences():
    m = CoefficientModel.from_expressions(
        2, ["-x1", "-x2"], [["2 + sin(x1*x2)", "0.3*cos(x2)"], ["tanh(x1)", "3 + x1^2"]],
        [["1 + 0.1*x1", "0"], ["0", "exp(-x2^2)"]], [[-2, 2], [-2, 2]])
    rng = np.random.default_rng(1)
    pts = rng.uniform(-2, 2, size=(200, 2))
    exact = m.dgamma(pts)
    h = 1e-6
    for l in range(2):
        step = np.zeros(2)
        step[l] = h
        fd = (m.gamma(pts + step) - m.gamma(pts - step)) / (2 * h)
        assert np.abs(exact[:, l] - fd).max() <= 1e-5 * max(1.0, np.abs(fd).max())


def test_callable_model_falls_back_to_finite_differences():
    m = CoefficientModel(
        dim=1, noise_dim=1, F=lambda x: -x, gamma=lambda x: (2 + np.sin(x))[..., None],
        sigma=lambda x: np.ones(x.shape + (1,)), box=[[-3, 3]])
    x = np.linspace(-3, 3, 7)[:, None]
    assert np.allclose(m.dgamma(x)[:, 0, 0, 0], np.cos(x[:, 0]), atol=1e-9)
    assert np.allclose(m.d2gamma(x)[:, 0, 0, 0, 0], -np.sin(x[:, 0]), atol=1e-5)


# -- colored noise ----------------------------------------------------------

def test_lift_matches_constant_friction_construction():
    k, a, lam = 2.0, 3.0, 0.7
    spec = ColoredNoiseSpec(1, [[a]], [[math.sqrt(2 * lam)]], 1.0, [["x1"]])
    m = lift_colored_noise(["-x1"], [["1"]], spec, [[-5, 5]], scale=f"1/{k}")
    x = np.array([1.5, 0.0])
    assert np.allclose(m.gamma(x), [[1 / k, -1.5 / k], [0, a]])
    assert np.allclose(m.sigma(x), [[0], [math.sqrt(2 * lam)]])
    assert np.allclose(m.F(x), [-1.5 / k, 0])
    assert m.dim == 2 and m.noise_dim == 1


def test_lift_matches_thermophoresis_construction():
    theta = "(0.5 + 0.1*x1^2)"
    spec = ColoredNoiseSpec(1, [[2.0]], [[2.0]], 1.0, [["sqrt(2*(1 + 0.5*sin(x1)))"]])
    m = lift_colored_noise(["0"], [["1"]], spec, [[-3, 3]], scale=f"1/{theta}")
    for x1 in (-1.0, 0.3, 2.0):
        th = 0.5 + 0.1 * x1 ** 2
        D = 1 + 0.5 * math.sin(x1)
        g = m.gamma(np.array([x1, 0.0]))
        assert np.allclose(g, [[1 / th, -math.sqrt(2 * D) / th], [0, 2]], rtol=1e-14)
        assert np.allclose(m.sigma(np.array([x1, 0.0])), [[0], [2]])


def test_lift_tau0_scales_the_noise_block():
    spec = ColoredNoiseSpec(1, [[1.0]], [[1.0]], 0.5, [["1"]])
    m = lift_colored_noise(["0"], [["1"]], spec, [[-1, 1]])
    assert np.allclose(m.gamma(np.zeros(2))[1, 1], 2.0)
    assert np.allclose(m.sigma(np.zeros(2))[1, 0], 2.0)


def test_lift_with_zero_coupling_gives_deterministic_flow():
    from kramers.drift import limit_sde

    spec = ColoredNoiseSpec(1, [[1.0]], [[1.0]], 1.0, [["0"]])
    m = lift_colored_noise(["-x1"], [["2 + sin(x1)"]], spec, [[-5, 5]])
    sde = limit_sde(m)
    x = np.array([[0.7, 0.0], [-2.0, 1.0]])
    assert np.allclose(sde.drift(x)[:, 0], -x[:, 0] / (2 + np.sin(x[:, 0])), atol=1e-14)
    assert np.allclose(sde.diffusion(x)[:, 0], 0.0)


def test_colored_spec_validation():
    with pytest.raises(ConfigError):
        ColoredNoiseSpec(1, [[-1.0]], [[1.0]], 1.0, [["1"]])
    with pytest.raises(ConfigError):
        ColoredNoiseSpec(1, [[1.0, 0], [0, 1.0]], [[1.0], [1.0]], 1.0, [["1"]])
    with pytest.raises(ConfigError):
        ColoredNoiseSpec(1, [[1.0]], [[1.0]], 0.0, [["1"]])


def test_lift_keeps_assumptions_when_coupling_is_small():
    # base friction 1 and |f| <= 1 with A = 1: symmetric part [[1, -f/2], [-f/2, 1]] > 0
    spec = ColoredNoiseSpec(1, [[1.0]], [[1.0]], 1.0, [["sin(x1)"]])
    base = check_assumptions(model_1d("1", box=(-5, 5)))
    lifted = check_assumptions(lift_colored_noise(["0"], [["1"]], spec, [[-5, 5]]))
    assert base.ok and lifted.ok
    assert lifted.c_lambda_est >= 0.5 - 1e-12


def test_lift_can_lose_symmetric_positivity_for_large_coupling():
    # with f = x1 on [-4, 4] the lifted friction [[1, -x1], [0, 1]] has an
    # indefinite symmetric part although the base friction is 1
    spec = ColoredNoiseSpec(1, [[1.0]], [[1.0]], 1.0, [["x1"]])
    lifted = check_assumptions(lift_colored_noise(["0"], [["1"]], spec, [[-4, 4]]))
    assert check_assumptions(model_1d("1", box=(-4, 4))).ok
    assert not lifted.ok


# -- magnetic ---------------------------------------------------------------

def test_magnetic_matrix_sign():
    b = 1.7
    H = magnetic_matrix(1.0, [0.0, 0.0, b])
    assert np.allclose(H, [[0, -b, 0], [b, 0, 0], [0, 0, 0]])
    rng = np.random.default_rng(0)
    for _ in range(20):
        q, B, v = rng.normal(), rng.normal(size=3), rng.normal(size=3)
        assert np.allclose(magnetic_matrix(q, B) @ v, -q * np.cross(v, B))


def fdr3():
    return fdr_model("2kT", 1.0, [[-2, 2]] * 3,
                     sigma=[["sqrt(2*(2 + sin(x2)))", "0", "0"], ["0", "2", "0"],
                            ["0.1", "0", "sqrt(3 + cos(x1))"]],
                     U="(x1^2 + x2^2 + x3^2)/2")


def test_augment_zero_field_is_unchanged():
    base = fdr3()
    aug = augment_magnetic(base, MagneticSpec(1.0, ["0", "0", "0"]))
    pts = base.grid(3)
    assert np.array_equal(aug.gamma(pts), base.gamma(pts))
    assert np.array_equal(aug.sigma(pts), base.sigma(pts))
    assert np.array_equal(aug.F(pts), base.F(pts))


@settings(max_examples=50, deadline=None)
@given(st.floats(-3, 3), st.lists(st.floats(-2, 2), min_size=9, max_size=9),
       st.integers(0, 2**32 - 1))
def test_augment_preserves_symmetric_part(q, coef, seed):
    c = coef
    B = [f"{c[0]} + {c[1]}*sin(x2)", f"{c[2]}*x3 + {c[3]}", f"{c[4]}*cos(x1*x2) + {c[5]}*x3^2"]
    base = fdr3()
    aug = augment_magnetic(base, MagneticSpec(q, B))
    pts = np.random.default_rng(seed).uniform(-2, 2, size=(30, 3))
    g, ga = base.gamma(pts), aug.gamma(pts)
    sym = lambda a: 0.5 * (a + np.swapaxes(a, -1, -2))
    # exact up to the rounding of g_ij + H_ij - H_ij
    tol = 1e-15 * (1 + np.abs(ga).max())
    assert np.abs(sym(ga) - sym(g)).max() <= tol
    assert np.abs(np.linalg.eigvalsh(sym(ga)) - np.linalg.eigvalsh(sym(g))).max() <= 10 * tol


def test_augment_callable_field():
    base = fdr3()
    aug = augment_magnetic(base, MagneticSpec(2.0, lambda x: np.stack(
        [np.zeros(x.shape[:-1]), np.zeros(x.shape[:-1]), 1 + x[..., 0]], axis=-1)))
    x = np.array([0.5, 0.0, 0.0])
    assert np.allclose(aug.gamma(x) - base.gamma(x), magnetic_matrix(2.0, [0, 0, 1.5]))


def test_augment_needs_three_dimensions():
    with pytest.raises(ConfigError):
        augment_magnetic(model_1d("1"), MagneticSpec(1.0, ["0", "0", "1"]))


# -- fluctuation-dissipation ----------------------------------------------------

def test_fdr_1d_examples():
    m = fdr_model("2kT", 1.0, [[-1, 1]], D="1", F="0")
    x = np.array([0.3])
    assert m.gamma(x)[0, 0] == pytest.approx(1.0)
    assert m.sigma(x)[0, 0] == pytest.approx(math.sqrt(2))
    with pytest.raises(AssumptionError):
        fdr_model("2kT", 1.0, [[-1, 1]], D="x1", F="0")


def test_fdr_multi_d_kT_convention():
    kT = 0.7
    s = math.sqrt(2 * kT)
    m = fdr_model("kT", kT, [[-1, 1]] * 2, sigma=[[str(s), "0"], ["0", str(s)]], F=["0", "0"])
    assert np.allclose(m.gamma(np.zeros(2)), 2 * np.eye(2))


def test_fdr_2kT_sigma_route_is_einstein_relation():
    m = fdr3()
    pts = m.grid(3)
    s = m.sigma(pts)
    assert np.allclose(s @ np.swapaxes(s, -1, -2), 2 * 1.0 * m.gamma(pts))


def test_fdr_requires_explicit_convention_and_inputs():
    with pytest.raises(ConfigError):
        fdr_model("einstein", 1.0, [[-1, 1]], D="1", F="0")
    with pytest.raises(ConfigError):
        fdr_model("2kT", 1.0, [[-1, 1]], F="0")
    with pytest.raises(ConfigError):
        fdr_model("2kT", 1.0, [[-1, 1]], D="1")
    with pytest.raises(ConfigError):
        fdr_model("2kT", -1.0, [[-1, 1]], D="1", F="0")


def test_fdr_potential_gives_conservative_force():
    m = fdr_model("2kT", 1.0, [[-3, 3]], D="2 + sin(x1)", U="x1^4/4 - x1^2")
    x = np.linspace(-3, 3, 11)[:, None]
    assert np.allclose(m.F(x)[:, 0], -(x[:, 0] ** 3 - 2 * x[:, 0]))
    assert m.meta["fdr"]["convention"] == "2kT"
