"""Flatness-based planning and model-free tracking of social distancing in the SIR model."""

from .estimation import DifferentiatorConfig, diff_estimate, gamma_estimate, gamma_series
from .integrator import SimGrid, SimulationError, rk4_step, simulate
from .mfc import ControllerState, MFCController, UltraLocalConfig, controller_step, f_est, ip_control
from .models import EpidemicState, SeirParams, SirParams, check_flat_identities, seir_rhs, sir_rhs
from .planner import (
    PlanParams,
    compare_relaxation,
    lambda_accept,
    plan_summary,
    reference_at,
)
from .scenario import ConfigError, ScenarioConfig, emit_outputs, parse_config, run_scenario

__version__ = "0.1.0"
