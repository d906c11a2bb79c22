import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from epiflat.estimation import (
    DifferentiatorConfig,
    diff_estimate,
    gamma_estimate,
    gamma_series,
    rational_identifiability_check,
)
from epiflat.integrator import SimGrid, simulate
from epiflat.models import EpidemicState, sir_field

H = 1.0 / 12.0
CFG = DifferentiatorConfig()


def window_times(t_end, cfg=CFG):
    return t_end + (np.arange(cfg.window_samples) - (cfg.window_samples - 1)) * cfg.sample_period


def test_constant_signal():
    assert diff_estimate(np.full(25, 0.42), CFG) == 0.0


@given(st.floats(min_value=0.0, max_value=1000.0))
def test_square_signal(t_end):
    t = window_times(t_end)
    assert abs(diff_estimate(t**2, CFG) - 2.0 * t_end) <= 1e-10


def test_exponential_matches_independent_polyfit():
    lam = 0.0085557
    t_end = 40.0
    t = window_times(t_end)
    y = np.exp(-lam * t)
    coeffs = np.polyfit(t - t_end, y, 2)
    assert diff_estimate(y, CFG) == pytest.approx(coeffs[1], rel=1e-9)
    exact = -lam * math.exp(-lam * t_end)
    # cubic truncation of a degree-2 end-point fit over a 2-day window
    assert abs(diff_estimate(y, CFG) / exact - 1.0) < 5e-5
    cubic = DifferentiatorConfig(fit_degree=3)
    assert abs(diff_estimate(y, cubic) / exact - 1.0) < 1e-6


def test_config_rules():
    with pytest.raises(ValueError):
        DifferentiatorConfig(window_samples=3, fit_degree=2)
    with pytest.raises(ValueError):
        DifferentiatorConfig(fit_degree=0)
    with pytest.raises(ValueError):
        diff_estimate(np.zeros(10), CFG)


def test_noise_attenuation_is_monotone_in_window():
    rng = np.random.default_rng(12345)
    spreads = []
    for W in (9, 17, 33, 65):
        cfg = DifferentiatorConfig(window_samples=W)
        est = [diff_estimate(rng.normal(0.0, 1e-4, W), cfg) for _ in range(2000)]
        spreads.append(np.std(est))
    assert all(b < a for a, b in zip(spreads, spreads[1:]))


def test_estimates_are_causal():
    rng = np.random.default_rng(0)
    n = 200
    I = 0.05 + 1e-4 * rng.normal(size=n)
    S = np.full(n, 0.9)
    beta = np.full(n, 0.2)
    base = gamma_series(I, S, beta, CFG)
    I2 = I.copy()
    I2[150:] += 0.01
    changed = gamma_series(I2, S, beta, CFG)
    np.testing.assert_array_equal(base.gamma_est[:150], changed.gamma_est[:150])
    assert not base.valid[:24].any() and base.valid[24:].all()


def test_gamma_estimate_inverts_exact_derivative():
    s = EpidemicState(0.8, 0.04, 0.16)
    _, dI, _ = sir_field(s.as_tuple(), 0.25, 0.1)
    est = gamma_estimate(s.I, s.S, 0.25, dI, t=3.0)
    assert est.valid and est.t == 3.0
    assert est.gamma_est == pytest.approx(0.1, rel=1e-14)


def test_gamma_estimate_below_floor_is_invalid():
    est = gamma_estimate(1e-9, 0.5, 0.2, 0.0)
    assert not est.valid and math.isnan(est.gamma_est)


def _constant_beta_run(days=80.0, gamma=0.1):
    grid = SimGrid(t_end=days)
    return simulate(
        EpidemicState(0.97, 0.03, 0.0),
        lambda t, y, b: sir_field(y, b, gamma),
        lambda t, s: 0.12 + 0.05 * math.sin(t / 10),
        grid,
        (0.01, 1.0),
    )


def test_gamma_series_on_noiseless_run():
    traj = _constant_beta_run()
    I = [r.state.I for r in traj.records]
    S = [r.state.S for r in traj.records]
    beta = [r.beta_applied for r in traj.records]
    series = gamma_series(I, S, beta, CFG)
    assert np.max(np.abs(series.gamma_est[series.valid] - 0.1)) <= 1e-3


def test_rational_identifiability_check():
    traj = _constant_beta_run(40.0)
    samples = [(r.t, r.state) for r in traj.records]
    betas = [r.beta_applied for r in traj.records]
    report = rational_identifiability_check(samples, betas, 0.1)
    assert report.checked == len(samples) and not report.skipped
    assert report.max_residual <= 1e-12


def test_identifiability_check_flags_vanished_infections():
    samples = [(0.0, EpidemicState(0.9, 0.1, 0.0)), (1.0, EpidemicState(0.5, 0.0, 0.5))]
    report = rational_identifiability_check(samples, [0.2, 0.2], 0.1)
    assert report.singular == [1] and report.checked == 1


def test_identifiability_check_skips_varying_gamma():
    report = rational_identifiability_check([], [], lambda t: 0.1 + 0.01 * t)
    assert report.skipped and "time-varying" in report.note
