"""Exit criteria for the toolkit, one test per criterion.

Each test prints a PASS/FAIL line; the lines are repeated in the pytest
terminal summary under "acceptance criteria".
"""

import math
import random
import textwrap
import time

import numpy as np
import pytest

from epiflat.cli import main
from epiflat.estimation import DifferentiatorConfig, diff_estimate
from epiflat.mfc import f_est
from epiflat.planner import PlanParams, lambda_accept, reference_at
from epiflat.scenario import parse_config, run_scenario

PLAN = """
[plan]
gamma = 0.1
I0 = 0.05
beta_accept = 0.22
"""

OPENLOOP = PLAN + """
[plant]
model = SIR
[grid]
control_period = 1/12
substeps = 8
t_end = 350
"""

FIG2 = PLAN + """
[plant]
model = SIR
[initial]
I = 0.06
[noise]
kind = gaussian
std = 0.005
target = actuation
[controller]
kind = mfc
a = 0.1
Kp = 1
"""

SEIR_MISMATCH = PLAN + """
[plant]
model = SEIR
alpha = 0.2
[controller]
kind = mfc
"""

GAMMA_SINE = PLAN + """
[plant]
model = SIR
[gamma_profile]
kind = sinusoid
amplitude = 0.2
period = 100
[controller]
kind = mfc
"""

N_SEEDS = 20
NOMINAL_PLAN = PlanParams(gamma=0.1, I0=0.05, beta_accept=0.22)


def bisect_lambda(gamma, I0, beta_accept):
    def q(lam):
        return lam * lam + (beta_accept - gamma) * lam - gamma * I0 * beta_accept

    lo, hi = gamma * I0, gamma
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        lo, hi = (mid, hi) if q(mid) < 0.0 else (lo, mid)
    return 0.5 * (lo + hi)


class Runs:
    """Lazily computed acceptance runs, shared by the criteria."""

    def __init__(self):
        self._cache = {}
        self.timings = {}

    def get(self, name, text, seed=None):
        key = (name, seed)
        if key not in self._cache:
            start = time.perf_counter()
            self._cache[key] = run_scenario(parse_config(textwrap.dedent(text)), seed=seed)
            self.timings[key] = time.perf_counter() - start
        return self._cache[key]

    def all(self):
        return list(self._cache.items())


@pytest.fixture(scope="module")
def runs():
    return Runs()


def max_rel_defect(result):
    worst = max(abs(r.I / r.I_ref - 1.0) for r in result.records)
    ref = reference_at(result.trajectory.final_t, NOMINAL_PLAN)
    return max(worst, abs(result.trajectory.final_state.I / ref.I_ref - 1.0))


def test_01_flatness_inversion(runs, acceptance_report):
    start = time.perf_counter()
    base = runs.get("openloop", OPENLOOP)
    elapsed = time.perf_counter() - start
    fine = runs.get("openloop_half", OPENLOOP.replace("control_period = 1/12", "control_period = 1/24"))
    d_base, d_fine = max_rel_defect(base), max_rel_defect(fine)
    ok = d_base <= 1e-3 and d_fine < d_base and elapsed < 1.0
    acceptance_report(
        1,
        "open-loop tracks I0*exp(-lambda t)",
        ok,
        f"max rel defect {d_base:.3e} (<= 1e-3), halved period {d_fine:.3e}, runtime {elapsed:.3f}s (< 1s)",
    )
    assert d_base <= 1e-3
    assert d_fine < d_base
    assert elapsed < 1.0


def test_02_lambda_accept(acceptance_report):
    rng = random.Random(20240601)
    worst_res = 0.0
    band_ok = True
    for _ in range(1000):
        gamma = rng.uniform(0.01, 1.0)
        I0 = rng.uniform(1e-4, 0.99)
        beta_accept = rng.uniform(0.01, 2.0)
        lam = lambda_accept(gamma, I0, beta_accept)
        terms = max(lam * lam, abs((beta_accept - gamma) * lam), gamma * I0 * beta_accept)
        res = abs(lam * lam + (beta_accept - gamma) * lam - gamma * I0 * beta_accept) / terms
        worst_res = max(worst_res, res)
        band_ok &= gamma * I0 < lam < gamma
    lam_nominal = lambda_accept(0.1, 0.05, 0.22)
    oracle = bisect_lambda(0.1, 0.05, 0.22)
    nominal_ok = abs(lam_nominal - oracle) <= 1e-12 * oracle and abs(lam_nominal - 0.0085557) < 1e-6
    ok = worst_res <= 1e-12 and band_ok and nominal_ok
    acceptance_report(
        2,
        "lambda_accept root and band",
        ok,
        f"worst rel residual {worst_res:.2e} (<= 1e-12), band held: {band_ok}, "
        f"nominal params {lam_nominal:.8f} vs bisection {oracle:.8f}",
    )
    assert ok


def test_03_asymptotics(runs, acceptance_report):
    plan = NOMINAL_PLAN
    beta_2000 = reference_at(2000.0, plan).beta_flat
    base = runs.get("openloop", OPENLOOP)
    S_sim = base.trajectory.final_state.S
    S_ref = reference_at(base.trajectory.final_t, plan).S_ref
    S_inf = 1.0 - 0.1 * 0.05 / bisect_lambda(0.1, 0.05, 0.22)
    S_series = [r.S for r in base.records] + [S_sim]
    trending = all(b < a for a, b in zip(S_series, S_series[1:])) and S_sim > S_inf
    ok = abs(beta_2000 - 0.22) <= 1e-6 and abs(S_sim - S_ref) <= 1e-3 and trending and abs(S_inf - 0.41564) < 2e-5
    acceptance_report(
        3,
        "asymptotics",
        ok,
        f"|beta_flat(2000) - 0.22| = {abs(beta_2000 - 0.22):.2e}, S(350) = {S_sim:.6f} vs closed form "
        f"{S_ref:.6f} (|diff| {abs(S_sim - S_ref):.2e}), decreasing toward S_inf = {S_inf:.6f}",
    )
    assert ok


def test_05_f_est_oracle(acceptance_report):
    h, n, a = 1.0 / 12.0, 30, 0.1
    s = np.arange(n + 1) * h
    worst = 0.0
    for F in (-1.0, 0.0, 0.5):
        for u0 in (-0.1, 0.0, 0.2):
            got = f_est(0.01 + (F + a * u0) * s, np.full(n, u0), a, h)
            worst = max(worst, abs(got - F) / max(abs(F), 1.0))
    ok = worst <= 1e-6
    acceptance_report(5, "F_est recovers F on ramp windows", ok, f"worst scaled error {worst:.2e} (<= 1e-6)")
    assert ok


def test_06_closed_loop_robustness(runs, acceptance_report):
    start = time.perf_counter()
    worst, min_I = 0.0, math.inf
    for seed in range(N_SEEDS):
        result = runs.get("fig2", FIG2, seed=seed)
        late = [abs(r.delta_I) for r in result.records if r.t > 30.0]
        worst = max(worst, max(late))
        min_I = min(min_I, min(r.I for r in result.records), result.trajectory.final_state.I)
    elapsed = time.perf_counter() - start
    ok = worst <= 0.01 and min_I >= 0.0 and elapsed < 10.0
    acceptance_report(
        6,
        "closed-loop robustness (I(0)=0.06, noise std 5e-3)",
        ok,
        f"{N_SEEDS} seeds: max |dI| after day 30 = {worst:.2e} (<= 0.01), min I = {min_I:.2e}, "
        f"runtime {elapsed:.2f}s (< 10s)",
    )
    assert ok


def test_07_seir_mismatch(runs, acceptance_report):
    result = runs.get("seir", SEIR_MISMATCH)
    worst = max(abs(r.delta_I) for r in result.records if r.t > 60.0)
    ok = worst <= 0.02
    acceptance_report(7, "SEIR plant under SIR plan + MFC", ok, f"max |dI| after day 60 = {worst:.2e} (<= 0.02)")
    assert ok


def test_08_differentiator_exactness(acceptance_report):
    cfg = DifferentiatorConfig()
    worst = 0.0
    offsets = np.arange(cfg.window_samples) - (cfg.window_samples - 1)
    for t_end in np.linspace(0.0, 1000.0, 101):
        t = t_end + offsets * cfg.sample_period
        for signal, deriv in ((np.ones_like(t), 0.0), (t, 1.0), (t**2, 2.0 * t_end)):
            worst = max(worst, abs(diff_estimate(signal, cfg) - deriv))
    ok = worst <= 1e-10
    acceptance_report(8, "degree-2 differentiator exact on 1, t, t^2", ok, f"worst abs error {worst:.2e} (<= 1e-10)")
    assert ok


def _gamma_errors(result):
    pairs = [(r.gamma_est, r.gamma_true) for r in result.records if r.gamma_est is not None]
    return max(abs(e - g) for e, g in pairs), max(abs(e - g) / g for e, g in pairs), len(pairs)


def test_09_gamma_estimation(runs, acceptance_report):
    const_ol, _, n1 = _gamma_errors(runs.get("openloop", OPENLOOP))
    const_cl, _, _ = _gamma_errors(runs.get("mfc_const", OPENLOOP + "\n[controller]\nkind = mfc\n"))
    _, rel_sine, n2 = _gamma_errors(runs.get("gamma_sine", GAMMA_SINE))
    ok = const_ol <= 1e-3 and const_cl <= 1e-3 and rel_sine <= 0.05
    acceptance_report(
        9,
        "recovery-rate estimation",
        ok,
        f"constant gamma: max |err| {const_ol:.2e} open loop, {const_cl:.2e} closed loop (<= 1e-3); "
        f"sinusoidal gamma: max rel err {rel_sine:.2%} (<= 5%) over {n2} valid samples",
    )
    assert ok


def test_10_determinism(tmp_path, acceptance_report):
    cfg_path = tmp_path / "fig2.ini"
    cfg_path.write_text(textwrap.dedent(FIG2))
    outputs = []
    for i in range(2):
        out = tmp_path / f"run{i}"
        assert main(["closedloop", "--config", str(cfg_path), "--out", str(out), "--seed", "11"]) == 0
        outputs.append(((out / "trajectory.csv").read_bytes(), (out / "summary.json").read_bytes()))
    ok = outputs[0] == outputs[1]
    acceptance_report(10, "byte-identical outputs for identical config + seed", ok, f"csv bytes {len(outputs[0][0])}")
    assert ok


def test_04_conservation(runs, acceptance_report):
    # runs last within the module so that every cached acceptance run is covered
    for name, text in (("openloop", OPENLOOP), ("seir", SEIR_MISMATCH), ("gamma_sine", GAMMA_SINE)):
        runs.get(name, text)
    runs.get("fig2", FIG2, seed=0)
    worst = 0.0
    for _, result in runs.all():
        totals = [r.S + r.I + r.R + (r.E or 0.0) for r in result.records]
        totals.append(result.trajectory.final_state.total())
        worst = max(worst, max(abs(x - 1.0) for x in totals))
    ok = worst <= 1e-9
    acceptance_report(4, "conservation of S+I+R(+E)", ok, f"{len(runs.all())} runs, worst |sum - 1| = {worst:.2e} (<= 1e-9)")
    assert ok
