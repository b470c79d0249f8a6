import csv
import io
import json
import math

import numpy as np
import pytest
from scipy import stats

from kramers.drift import limit_sde
from kramers.experiments import (
    ExitRateError,
    batch_mean_stderr,
    colored_noise_limit_check,
    fit_slope,
    full_level,
    gibbs_marginal_cdf,
    ks_distance,
    mass_sweep,
    stationary_check,
    thermophoresis_drift_check,
)
from kramers.errors import ConfigError
from kramers.model import CoefficientModel, fdr_model
from kramers.sde import SolverConfig


def model_1d(gamma, sigma="1", F="-x1", box=(-10, 10)):
    return CoefficientModel.from_expressions(1, [F], [[gamma]], [[sigma]], [box])


SEC = model_1d("2 + sin(x1)")


# -- statistics helpers -------------------------------------------------------

def test_fit_slope_exact_power_law():
    m = [0.1, 0.01, 0.001]
    slope, ci = fit_slope(m, [3 * x for x in m])
    assert slope == pytest.approx(1.0, abs=1e-12)
    assert ci[0] == pytest.approx(1.0, abs=1e-9) and ci[1] == pytest.approx(1.0, abs=1e-9)
    slope, ci = fit_slope([0.1, 0.01], [0.1, 0.01])
    assert slope == pytest.approx(1.0) and ci is None
    assert fit_slope([0.1, 0.01], [0.1, 0.0]) == (None, None)


def test_fit_slope_interval_matches_scipy():
    m = np.array([0.2, 0.1, 0.05, 0.02, 0.01])
    y = m ** 1.1 * np.array([1.1, 0.9, 1.05, 0.97, 1.02])
    slope, ci = fit_slope(m, y)
    ref = stats.linregress(np.log(m), np.log(y))
    q = stats.t.ppf(0.975, len(m) - 2)
    assert slope == pytest.approx(ref.slope, rel=1e-12)
    assert ci == pytest.approx([ref.slope - q * ref.stderr, ref.slope + q * ref.stderr], rel=1e-10)


def test_batch_mean_stderr():
    x = np.random.default_rng(0).exponential(size=20000)
    mean, se = batch_mean_stderr(x, 100)
    assert mean == x.mean()
    assert se == pytest.approx(x.std() / math.sqrt(x.size), rel=0.2)
    assert batch_mean_stderr(np.ones(37), 20) == (1.0, 0.0)
    assert math.isnan(batch_mean_stderr([2.0], 20)[1])


def test_full_level_resolves_the_relaxation_time():
    # |gamma| = 3 on the box, dt = 1/128, four steps per m / |gamma|
    assert full_level(model_1d("2 + sin(x1)"), 0.01, 1 / 128, 4) == 4
    assert full_level(model_1d("2 + sin(x1)"), 1.0, 1 / 128, 4) == 0
    for m in (0.1, 0.01, 0.001):
        L = full_level(SEC, m, 1 / 128, 4)
        assert (1 / 128) / 2 ** L <= m / (4 * 3.0) < (1 / 128) / 2 ** (L - 1) or L == 0


# -- sweeps -----------------------------------------------------------------------

def test_constant_friction_sweep_decreases():
    m = model_1d("2", sigma="1")
    cfg = SolverConfig(dt=1 / 128, T=0.5, paths=100, x0=(0.5,))
    r = mass_sweep(m, [0.1, 0.01], cfg, seed=2, compare_no_drift=True)
    assert r.monotone and r.valid
    assert r.estimates[1] < 0.3 * r.estimates[0]
    # S = 0 for constant friction, so dropping it changes nothing
    assert r.alternatives["no_drift"]["estimates"] == r.estimates
    assert r.paths == [100, 100] and r.exits == [0, 0]


def test_zero_temperature_sweep_is_deterministic_and_quadratic():
    z = model_1d("2 + sin(x1)", sigma="0")
    r = mass_sweep(z, [0.1, 0.05, 0.025], SolverConfig(dt=1 / 128, T=1.0, paths=4, x0=(-1.0,)))
    assert r.stderr == [0.0, 0.0, 0.0]
    # the gap is O(m), so its square is O(m^2) until the Euler bias of the limit shows
    assert r.slope > 1.5


def test_report_is_reproducible_and_serialises(tmp_path):
    cfg = SolverConfig(dt=1 / 64, T=0.5, paths=40, x0=(-1.0,), batch_size=16)
    a = mass_sweep(SEC, [0.1, 0.02], cfg, seed=9, compare_no_drift=True)
    b = mass_sweep(SEC, [0.1, 0.02], cfg, seed=9, compare_no_drift=True)
    assert a.to_json() == b.to_json()
    d = json.loads(a.to_json())
    assert d["masses"] == [0.1, 0.02] and d["meta"]["seed"] == 9
    assert d["slope_ci"] is None
    rows = list(csv.reader(io.StringIO(a.to_csv())))
    assert rows[0][:3] == ["mass", "estimate", "stderr"] and "no_drift_estimate" in rows[0]
    assert float(rows[1][1]) == a.estimates[0]
    a.write(tmp_path)
    assert (tmp_path / "converge.json").read_text() == a.to_json()
    other = mass_sweep(SEC, [0.1, 0.02], cfg, seed=10)
    assert other.estimates != a.estimates


def test_standard_error_shrinks_like_inverse_root_paths():
    se = []
    for n in (400, 800):
        cfg = SolverConfig(dt=1 / 64, T=1.0, paths=n, x0=(-1.0,))
        se.append(np.array(mass_sweep(SEC, [0.1, 0.05], cfg, seed=5, n_batches=100).stderr))
    ratio = se[1] / se[0]
    assert np.all(np.abs(ratio / (1 / math.sqrt(2)) - 1) <= 0.2), ratio


def test_independent_noise_does_not_converge():
    cfg = SolverConfig(dt=1 / 128, T=1.0, paths=200, x0=(-1.0,))
    coupled = mass_sweep(SEC, [0.1, 0.01], cfg, seed=3)
    control = mass_sweep(SEC, [0.1, 0.01], cfg, seed=3, independent_noise=True)
    assert control.meta["independent_noise"]
    assert min(control.estimates) >= 0.5
    assert control.estimates[-1] >= 0.8 * control.estimates[0]
    assert coupled.estimates[-1] < 0.05 * control.estimates[-1]


def test_exit_rate_breach_raises_with_report():
    m = model_1d("1", sigma="3", F="0", box=(-0.5, 0.5))
    cfg = SolverConfig(dt=1 / 64, T=1.0, paths=50, x0=(0.0,))
    with pytest.raises(ExitRateError) as info:
        mass_sweep(m, [0.1, 0.05], cfg)
    rep = info.value.report
    assert not rep.valid and rep.exits[0] > 0.5
    lax = mass_sweep(m, [0.1, 0.05], cfg, strict=False)
    assert not lax.valid and lax.to_json() == rep.to_json()
    assert json.loads(rep.to_json())["estimates"] == [None, None]


def test_sweep_validates_masses():
    cfg = SolverConfig(dt=1 / 64, T=0.5, paths=4, x0=(0.0,))
    with pytest.raises(ConfigError):
        mass_sweep(SEC, [0.01, 0.1], cfg)
    with pytest.raises(ConfigError):
        mass_sweep(SEC, [0.1, -0.1], cfg)


# -- closed forms ---------------------------------------------------------------

def test_colored_noise_limit_closed_form():
    for f, k, a, lam in (("sin(x1)", 1.0, 1.0, 1.0), ("1 + 0.5*x1^2", 0.5, 2.0, 0.3),
                         ("tanh(x1)", 3.0, 0.7, 2.0)):
        out = colored_noise_limit_check(f, F="-x1", k=k, a=a, lam=lam)
        assert out["drift_err"] <= 1e-10 and out["diffusion_err"] <= 1e-12


def test_thermophoresis_limit_closed_form():
    pts = np.linspace(-2, 2, 21)
    out = thermophoresis_drift_check("-x1", "2 + tanh(x1)", "1 + 0.5*tanh(x1)", 2.0, pts)
    assert out["drift_err"] <= 1e-10 and out["diffusion_err"] <= 1e-12
    assert out["drift_err_F_over_theta"] > 0.1


# -- stationary check ----------------------------------------------------------

def test_gibbs_marginal_cdf_matches_normal():
    x, F = gibbs_marginal_cdf("x1^2/2", 0.5, [[-8, 8]])
    assert np.abs(F - stats.norm.cdf(x, scale=math.sqrt(0.5))).max() <= 1e-7
    x, F = gibbs_marginal_cdf("x1^2/2 + x2^2", 1.0, [[-8, 8], [-6, 6]], axis=1)
    assert np.abs(F - stats.norm.cdf(x, scale=math.sqrt(0.5))).max() <= 1e-5


def test_ks_distance_matches_scipy():
    s = np.random.default_rng(1).normal(size=3000)
    x = np.linspace(-8, 8, 40001)
    d = ks_distance(s, x, stats.norm.cdf(x))
    assert d == pytest.approx(stats.kstest(s, "norm").statistic, abs=1e-6)


def test_stationary_constant_D():
    f = fdr_model("2kT", 1.0, [[-10, 10]], D="1", U="x1^2/2")
    cfg = SolverConfig(dt=0.01, T=20.0, paths=200, x0=(0.0,))
    res = stationary_check(limit_sde(f), cfg, "x1^2/2", seed=1, burn_in=0.1, record_dt=0.5)
    assert res.valid and res.kT_gibbs == 1.0
    assert res.ks[0] <= 0.02
    assert res.samples == 200 * 37


def test_stationary_check_needs_fdr_model():
    cfg = SolverConfig(dt=0.1, T=1.0, paths=2, x0=(0.0,))
    with pytest.raises(ConfigError):
        stationary_check(limit_sde(SEC), cfg, "x1^2/2")
