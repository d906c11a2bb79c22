"""Experiment configuration, orchestration and output files.

A scenario is described by a small INI file (flat sections, case-sensitive
keys). Every key has a default except ``[plan] gamma`` and ``[plan] I0`` and
one of ``[plan] lambda`` / ``[plan] beta_accept``. Unknown sections or keys
are errors.
"""

from __future__ import annotations

import configparser
import csv
import dataclasses
import io
import json
import math
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Any, Callable, Optional, Sequence

import numpy as np

from .estimation import DEFAULT_I_FLOOR, DifferentiatorConfig, gamma_series
from .integrator import NOISE_TARGETS, SimGrid, Trajectory, simulate
from .mfc import MFCController, UltraLocalConfig
from .models import EpidemicState, seir_field, sir_field
from .planner import HOLD_MODES, PlanParams, feedforward, plan_summary, reference_table

CSV_COLUMNS = (
    "t",
    "S",
    "I",
    "R",
    "E",
    "I_ref",
    "R_ref",
    "S_ref",
    "beta_flat",
    "beta_commanded",
    "beta_applied",
    "delta_I",
    "F_est",
    "gamma_true",
    "gamma_est",
)
REFERENCE_COLUMNS = ("t", "I_ref", "R_ref", "S_ref", "beta_flat")


class ConfigError(ValueError):
    """Invalid scenario configuration; the message names the offending field."""


# ---------------------------------------------------------------- config types


@dataclass(frozen=True)
class PlantConfig:
    model: str = "SIR"
    gamma: float = 0.1
    alpha: Optional[float] = None
    beta_lower: float = 0.01
    beta_upper: float = 0.5

    @property
    def beta_bounds(self) -> tuple[float, float]:
        return (self.beta_lower, self.beta_upper)


@dataclass(frozen=True)
class GammaProfile:
    """Recovery rate of the plant as a function of time (days)."""

    kind: str = "constant"
    mean: float = 0.1
    amplitude: float = 0.2
    period: float = 100.0
    points: tuple[tuple[float, float], ...] = ()

    def __call__(self, t: float) -> float:
        if self.kind == "constant":
            return self.mean
        if self.kind == "sinusoid":
            return self.mean * (1.0 + self.amplitude * math.sin(2.0 * math.pi * t / self.period))
        ts, gs = zip(*self.points)
        return float(np.interp(t, ts, gs))

    @property
    def varying(self) -> bool:
        return self.kind != "constant"


@dataclass(frozen=True)
class NoiseConfig:
    kind: str = "none"
    std: float = 5e-3
    seed: Optional[int] = None
    target: str = "actuation"


@dataclass(frozen=True)
class ControllerConfig:
    kind: str = "openloop"
    ultra_local: UltraLocalConfig = field(default_factory=UltraLocalConfig)
    hold: str = "midpoint"


@dataclass(frozen=True)
class EstimationConfig:
    enabled: bool = True
    window_samples: int = 25
    fit_degree: int = 2
    I_floor: float = DEFAULT_I_FLOOR


@dataclass(frozen=True)
class OutputConfig:
    plots: bool = False
    settle_time: float = 30.0


@dataclass(frozen=True)
class ScenarioConfig:
    plan: PlanParams
    plant: PlantConfig
    initial: EpidemicState
    gamma_profile: GammaProfile = GammaProfile()
    noise: NoiseConfig = NoiseConfig()
    controller: ControllerConfig = ControllerConfig()
    grid: SimGrid = SimGrid()
    estimation: EstimationConfig = EstimationConfig()
    output: OutputConfig = OutputConfig()

    def with_seed(self, seed: Optional[int]) -> "ScenarioConfig":
        if seed is None:
            return self
        return dataclasses.replace(self, noise=dataclasses.replace(self.noise, seed=int(seed)))

    def with_controller(self, kind: str) -> "ScenarioConfig":
        return dataclasses.replace(self, controller=dataclasses.replace(self.controller, kind=kind))

    def differentiator(self) -> DifferentiatorConfig:
        return DifferentiatorConfig(
            self.estimation.window_samples, self.estimation.fit_degree, self.grid.control_period
        )

    def to_dict(self) -> dict[str, Any]:
        """Fully resolved settings, echoed into the run summary."""
        d = dataclasses.asdict(self)
        d["plan"]["lambda_used"] = self.plan.rate
        d["gamma_profile"]["points"] = [list(p) for p in self.gamma_profile.points]
        return d


# ---------------------------------------------------------------- parsing


def _number(text: str) -> float:
    try:
        return float(text)
    except ValueError:
        return float(Fraction(text.replace(" ", "")))


def _integer(text: str) -> int:
    value = _number(text)
    if value != int(value):
        raise ValueError(f"expected an integer, got {text!r}")
    return int(value)


def _boolean(text: str) -> bool:
    lowered = text.strip().lower()
    if lowered in ("1", "true", "yes", "on"):
        return True
    if lowered in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"expected a boolean, got {text!r}")


def _choice(*options: str) -> Callable[[str], str]:
    def parse(text: str) -> str:
        for opt in options:
            if text.strip().lower() == opt.lower():
                return opt
        raise ValueError(f"expected one of {', '.join(options)}, got {text!r}")

    return parse


def _points(text: str) -> tuple[tuple[float, float], ...]:
    pts = []
    for item in text.split(","):
        t, _, g = item.partition(":")
        if not g:
            raise ValueError(f"piecewise point must be 't:gamma', got {item.strip()!r}")
        pts.append((_number(t), _number(g)))
    if len(pts) < 1 or any(b[0] <= a[0] for a, b in zip(pts, pts[1:])):
        raise ValueError("piecewise points need strictly increasing times")
    return tuple(pts)


SCHEMA: dict[str, dict[str, Callable[[str], Any]]] = {
    "plan": {"gamma": _number, "I0": _number, "lambda": _number, "beta_accept": _number},
    "plant": {
        "model": _choice("SIR", "SEIR"),
        "gamma": _number,
        "alpha": _number,
        "beta_lower": _number,
        "beta_upper": _number,
    },
    "initial": {"S": _number, "I": _number, "R": _number, "E": _number},
    "gamma_profile": {
        "kind": _choice("constant", "sinusoid", "piecewise"),
        "mean": _number,
        "amplitude": _number,
        "period": _number,
        "points": _points,
    },
    "noise": {
        "kind": _choice("none", "gaussian"),
        "std": _number,
        "seed": _integer,
        "target": _choice(*NOISE_TARGETS),
    },
    "controller": {
        "kind": _choice("openloop", "mfc"),
        "a": _number,
        "Kp": _number,
        "tau": _number,
        "hold": _choice(*HOLD_MODES),
    },
    "grid": {"t0": _number, "t_end": _number, "control_period": _number, "substeps": _integer},
    "estimation": {
        "enabled": _boolean,
        "window_samples": _integer,
        "fit_degree": _integer,
        "I_floor": _number,
    },
    "output": {"plots": _boolean, "settle_time": _number},
}


def _read_sections(text: str) -> dict[str, dict[str, Any]]:
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    parser.optionxform = str  # keys are case-sensitive (I0, Kp, S, I, ...)
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc}") from exc
    if parser.defaults():
        raise ConfigError("a [DEFAULT] section is not supported")
    values: dict[str, dict[str, Any]] = {name: {} for name in SCHEMA}
    for section in parser.sections():
        if section not in SCHEMA:
            raise ConfigError(f"unknown section [{section}]")
        for key, raw in parser.items(section):
            if key not in SCHEMA[section]:
                raise ConfigError(f"unknown key [{section}] {key}")
            try:
                values[section][key] = SCHEMA[section][key](raw)
            except (ValueError, ZeroDivisionError) as exc:
                raise ConfigError(f"[{section}] {key}: {exc}") from exc
    return values


def _build(section: str, factory, **kwargs):
    try:
        return factory(**kwargs)
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"[{section}] {exc}") from exc


def parse_config(text: str) -> ScenarioConfig:
    """Parse and validate scenario text, resolving every default."""
    v = _read_sections(text)
    plan_v, plant_v = v["plan"], v["plant"]

    for key in ("gamma", "I0"):
        if key not in plan_v:
            raise ConfigError(f"[plan] {key} is required")
    if ("lambda" in plan_v) == ("beta_accept" in plan_v):
        raise ConfigError("[plan] set exactly one of lambda and beta_accept")

    model = plant_v.get("model", "SIR")
    if model == "SEIR" and "alpha" not in plant_v:
        raise ConfigError("[plant] alpha is required for the SEIR plant")
    if model == "SIR" and "alpha" in plant_v:
        raise ConfigError("[plant] alpha only applies to the SEIR plant")
    plant = _build(
        "plant",
        PlantConfig,
        model=model,
        gamma=plant_v.get("gamma", plan_v["gamma"]),
        alpha=plant_v.get("alpha"),
        beta_lower=plant_v.get("beta_lower", PlantConfig.beta_lower),
        beta_upper=plant_v.get("beta_upper", PlantConfig.beta_upper),
    )
    if not plant.gamma > 0.0:
        raise ConfigError(f"[plant] gamma must be > 0, got {plant.gamma!r}")
    if plant.alpha is not None and not plant.alpha > 0.0:
        raise ConfigError(f"[plant] alpha must be > 0, got {plant.alpha!r}")
    if not 0.0 < plant.beta_lower < plant.beta_upper:
        raise ConfigError("[plant] need 0 < beta_lower < beta_upper")

    plan = _build(
        "plan",
        PlanParams,
        gamma=plan_v["gamma"],
        I0=plan_v["I0"],
        lam=plan_v.get("lambda"),
        beta_accept=plan_v.get("beta_accept"),
        beta_lower=plant.beta_lower,
        beta_upper=plant.beta_upper,
    )

    init_v = v["initial"]
    if model == "SIR" and "E" in init_v:
        raise ConfigError("[initial] E only applies to the SEIR plant")
    I = init_v.get("I", plan.I0)
    R = init_v.get("R", 0.0)
    E = init_v.get("E", 0.0) if model == "SEIR" else None
    S = init_v.get("S", 1.0 - I - R - (E or 0.0))
    initial = EpidemicState(S=S, I=I, R=R, E=E)
    try:
        initial.validate()
    except ValueError as exc:
        raise ConfigError(f"[initial] {exc}") from exc

    gp = v["gamma_profile"]
    profile = GammaProfile(
        kind=gp.get("kind", "constant"),
        mean=gp.get("mean", plant.gamma),
        amplitude=gp.get("amplitude", GammaProfile.amplitude),
        period=gp.get("period", GammaProfile.period),
        points=gp.get("points", ()),
    )
    if profile.kind == "piecewise" and not profile.points:
        raise ConfigError("[gamma_profile] points are required for kind = piecewise")
    if profile.kind == "sinusoid" and not (profile.period > 0.0 and 0.0 <= profile.amplitude < 1.0):
        raise ConfigError("[gamma_profile] sinusoid needs period > 0 and 0 <= amplitude < 1")
    if profile.kind == "piecewise" and any(g <= 0.0 for _, g in profile.points):
        raise ConfigError("[gamma_profile] piecewise gamma values must be > 0")

    noise = NoiseConfig(**v["noise"])
    if noise.kind != "none" and not noise.std >= 0.0:
        raise ConfigError(f"[noise] std must be >= 0, got {noise.std!r}")

    cv = v["controller"]
    ul = _build(
        "controller",
        UltraLocalConfig,
        a=cv.get("a", 0.1),
        Kp=cv.get("Kp", 1.0),
        tau=cv.get("tau", 2.5),
    )
    controller = ControllerConfig(
        kind=cv.get("kind", "openloop"), ultra_local=ul, hold=cv.get("hold", "midpoint")
    )
    grid = _build("grid", SimGrid, **v["grid"])
    if grid.t0 < 0.0:
        raise ConfigError("[grid] t0 must be >= 0 (the plan starts at t = 0)")
    if controller.kind == "mfc":
        try:
            ul.window_periods(grid.control_period)
        except ValueError as exc:
            raise ConfigError(f"[controller] tau: {exc}") from exc

    estimation = EstimationConfig(**v["estimation"])
    cfg = ScenarioConfig(
        plan=plan,
        plant=plant,
        initial=initial,
        gamma_profile=profile,
        noise=noise,
        controller=controller,
        grid=grid,
        estimation=estimation,
        output=OutputConfig(**v["output"]),
    )
    if estimation.enabled:
        try:
            cfg.differentiator()
        except ValueError as exc:
            raise ConfigError(f"[estimation] {exc}") from exc
    return cfg


def load_config(path: str | Path) -> ScenarioConfig:
    return parse_config(Path(path).read_text(encoding="utf-8"))


def validate_runnable(cfg: ScenarioConfig) -> None:
    if cfg.noise.kind != "none" and cfg.noise.seed is None:
        raise ConfigError("[noise] seed is required when noise is enabled (or pass --seed)")


# ---------------------------------------------------------------- running


@dataclass(frozen=True)
class RunRecord:
    t: float
    S: float
    I: float
    R: float
    E: Optional[float]
    I_ref: float
    R_ref: float
    S_ref: float
    beta_flat: float
    beta_commanded: float
    beta_applied: float
    delta_I: float
    F_est: Optional[float]
    gamma_true: float
    gamma_est: Optional[float]

    def row(self) -> list[str]:
        return [_fmt(getattr(self, name)) for name in CSV_COLUMNS]


@dataclass
class RunResult:
    records: list[RunRecord]
    summary: dict[str, Any]
    trajectory: Trajectory


class OpenLoopController:
    """Holds the flat control ``beta_flat`` with no feedback."""

    def __init__(self, plan: PlanParams, sample_period: float, hold: str = "midpoint"):
        self.plan = plan
        self.sample_period = sample_period
        self.hold = hold

    def __call__(self, t: float, state: EpidemicState) -> float:
        return feedforward(t, self.plan, self.sample_period, self.hold)


def make_plant(cfg: ScenarioConfig):
    gamma_of = cfg.gamma_profile
    g0 = gamma_of.mean
    alpha = cfg.plant.alpha
    if cfg.plant.model == "SIR":
        if gamma_of.varying:
            return lambda t, y, b: sir_field(y, b, gamma_of(t))
        return lambda t, y, b: sir_field(y, b, g0)
    if gamma_of.varying:
        return lambda t, y, b: seir_field(y, b, gamma_of(t), alpha)
    return lambda t, y, b: seir_field(y, b, g0, alpha)


def make_noise(cfg: NoiseConfig):
    if cfg.kind == "none":
        return None
    rng = np.random.default_rng(cfg.seed)
    std = cfg.std
    return lambda: float(rng.normal(0.0, std))


def make_controller(cfg: ScenarioConfig):
    period = cfg.grid.control_period
    if cfg.controller.kind == "mfc":
        return MFCController(
            cfg.plan, cfg.controller.ultra_local, period, cfg.plant.beta_bounds, cfg.controller.hold
        )
    return OpenLoopController(cfg.plan, period, cfg.controller.hold)


def run_scenario(cfg: ScenarioConfig, seed: Optional[int] = None) -> RunResult:
    """Simulate one scenario and assemble its records and summary.

    ``seed`` overrides ``[noise] seed``. Runs are deterministic given the
    resolved configuration.
    """
    cfg = cfg.with_seed(seed)
    validate_runnable(cfg)
    controller = make_controller(cfg)
    traj = simulate(
        cfg.initial,
        make_plant(cfg),
        controller,
        cfg.grid,
        cfg.plant.beta_bounds,
        noise=make_noise(cfg.noise),
        noise_target=cfg.noise.target,
    )
    records = _assemble(cfg, traj, getattr(controller, "log", None))
    return RunResult(records, summarize(records, cfg, traj), traj)


def _assemble(cfg: ScenarioConfig, traj: Trajectory, log) -> list[RunRecord]:
    n = len(traj.records)
    if n == 0:
        return []
    t = np.array([r.t for r in traj.records])
    ref = reference_table(t, cfg.plan)
    states = [r.state for r in traj.records]
    I = np.array([s.I for s in states])
    S = np.array([s.S for s in states])
    applied = np.array([r.beta_applied for r in traj.records])

    gamma_est = [None] * n
    if cfg.estimation.enabled:
        series = gamma_series(I, S, applied, cfg.differentiator(), cfg.estimation.I_floor)
        gamma_est = [float(g) if ok else None for g, ok in zip(series.gamma_est, series.valid)]
    f_values = [None] * n
    if log is not None:
        f_values = [None if math.isnan(f) else f for _, f, _ in log]

    out = []
    for k, (rec, st) in enumerate(zip(traj.records, states)):
        out.append(
            RunRecord(
                t=rec.t,
                S=st.S,
                I=st.I,
                R=st.R,
                E=st.E,
                I_ref=float(ref["I_ref"][k]),
                R_ref=float(ref["R_ref"][k]),
                S_ref=float(ref["S_ref"][k]),
                beta_flat=float(ref["beta_flat"][k]),
                beta_commanded=rec.beta_commanded,
                beta_applied=rec.beta_applied,
                delta_I=st.I - float(ref["I_ref"][k]),
                F_est=f_values[k],
                gamma_true=cfg.gamma_profile(rec.t),
                gamma_est=gamma_est[k],
            )
        )
    return out


def summarize(
    records: Sequence[RunRecord], cfg: ScenarioConfig, traj: Optional[Trajectory] = None
) -> dict[str, Any]:
    """Run metrics. Everything except ``horizon_state`` follows from the CSV."""
    lo, hi = cfg.plant.beta_bounds
    summary: dict[str, Any] = {
        "config": cfg.to_dict(),
        "plan": plan_report(cfg.plan),
        "records": len(records),
    }
    if records:
        t = np.array([r.t for r in records])
        dI = np.abs([r.delta_I for r in records])
        settled = dI[t > cfg.grid.t0 + cfg.output.settle_time]
        totals = [r.S + r.I + r.R + (r.E or 0.0) for r in records]
        last = records[-1]
        summary.update(
            max_abs_delta_I=float(dI.max()),
            max_abs_delta_I_after_settle=float(settled.max()) if settled.size else None,
            final_record={"t": last.t, "S": last.S, "I": last.I, "R": last.R, "E": last.E},
            clamp_count=sum(r.beta_applied in (lo, hi) for r in records),
            max_conservation_drift=float(max(abs(x - 1.0) for x in totals)),
            min_I=float(min(r.I for r in records)),
        )
        pairs = [(r.gamma_est, r.gamma_true) for r in records if r.gamma_est is not None]
        if pairs:
            err = [abs(e - g) for e, g in pairs]
            summary["gamma_max_abs_error"] = max(err)
            summary["gamma_max_rel_error"] = max(x / g for x, (_, g) in zip(err, pairs))
    if traj is not None and traj.final_state is not None:
        fs = traj.final_state
        summary["horizon_state"] = {"t": traj.final_t, "S": fs.S, "I": fs.I, "R": fs.R, "E": fs.E}
    return summary


def plan_report(plan: PlanParams) -> dict[str, Any]:
    # bound violations are reported in the "warnings" field instead
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        return dataclasses.asdict(plan_summary(plan))


def derive_seed(seed: int, run_index: int) -> int:
    """Independent per-run seed from a scenario seed and a run index."""
    return int(np.random.SeedSequence([seed, run_index]).generate_state(1)[0])


def _batch_worker(args: tuple[ScenarioConfig, int]) -> dict[str, Any]:
    cfg, seed = args
    return run_scenario(cfg, seed=seed).summary


def run_batch(
    cfg: ScenarioConfig, seed: int, n_runs: int, workers: Optional[int] = None
) -> list[dict[str, Any]]:
    """Repeat a scenario with derived seeds; ``workers > 1`` uses processes."""
    jobs = [(cfg, derive_seed(seed, i)) for i in range(n_runs)]
    if workers is None or workers <= 1:
        return [_batch_worker(job) for job in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_batch_worker, jobs))


# ---------------------------------------------------------------- outputs


def _fmt(value: Optional[float]) -> str:
    if value is None:
        return ""
    value = float(value)
    if math.isnan(value):
        return ""
    return repr(value)


def records_csv(records: Sequence[RunRecord]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_COLUMNS)
    for rec in records:
        writer.writerow(rec.row())
    return buf.getvalue()


def reference_csv(plan: PlanParams, grid: SimGrid) -> str:
    times = [k * grid.control_period for k in range(grid.n_periods + 1)]
    table = reference_table(times, plan)
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(REFERENCE_COLUMNS)
    for k in range(len(times)):
        writer.writerow([repr(float(table[c][k])) for c in REFERENCE_COLUMNS])
    return buf.getvalue()


def emit_outputs(
    result: RunResult, cfg: ScenarioConfig, out_dir: str | Path, plots: Optional[bool] = None
) -> list[Path]:
    """Write ``trajectory.csv``, ``summary.json`` and optionally PNG panels."""
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        csv_path = out / "trajectory.csv"
        csv_path.write_text(records_csv(result.records), encoding="utf-8")
        summary_path = out / "summary.json"
        summary_path.write_text(json.dumps(result.summary, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    except OSError as exc:
        raise OSError(f"cannot write outputs to {out}: {exc}") from exc
    written = [csv_path, summary_path]
    if cfg.output.plots if plots is None else plots:
        from .plots import plot_run

        written.extend(plot_run(result.records, out))
    return written


def read_trajectory_csv(path: str | Path) -> tuple[list[str], list[dict[str, str]]]:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        rows = list(reader)
        return list(reader.fieldnames or []), rows


def estimate_gamma_csv(
    rows: Sequence[dict[str, str]],
    cfg: DifferentiatorConfig,
    I_floor: float = DEFAULT_I_FLOOR,
) -> list[dict[str, str]]:
    """Recompute ``gamma_est`` from a trajectory CSV and add ``dI_est``/``gamma_valid``."""
    for col in ("I", "S", "beta_applied"):
        if rows and col not in rows[0]:
            raise ValueError(f"trajectory CSV lacks column {col!r}")
    I = [float(r["I"]) for r in rows]
    S = [float(r["S"]) for r in rows]
    beta = [float(r["beta_applied"]) for r in rows]
    series = gamma_series(I, S, beta, cfg, I_floor)
    out = []
    for row, d, g, ok in zip(rows, series.dI_est, series.gamma_est, series.valid):
        new = dict(row)
        new["gamma_est"] = _fmt(g) if ok else ""
        new["dI_est"] = _fmt(d)
        new["gamma_valid"] = "1" if ok else "0"
        out.append(new)
    return out


def write_rows(path: str | Path, fieldnames: Sequence[str], rows: Sequence[dict[str, str]]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(fieldnames), lineterminator="\n")
        writer.writeheader()
        writer.writerows(rows)

