"""Model-free tracking around the flat reference.

Ultra-local model of the tracking error::

    d/dt dI = F + a * dbeta

``F`` lumps everything the plan does not know about and is re-estimated on a
sliding window of length ``tau``; the intelligent proportional (iP) law then
sets ``dbeta = -(F_est + Kp dI) / a``.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Optional, Sequence

import numpy as np

from .models import EpidemicState
from .planner import PlanParams, ReferenceSample, feedforward, reference_at


@dataclass(frozen=True)
class UltraLocalConfig:
    a: float = 0.1
    Kp: float = 1.0
    tau: float = 2.5

    def __post_init__(self) -> None:
        if self.a == 0.0 or not math.isfinite(self.a):
            raise ValueError(f"a must be finite and non-zero, got {self.a!r}")
        if not self.Kp > 0.0:
            raise ValueError(f"Kp must be > 0, got {self.Kp!r}")
        if not self.tau > 0.0:
            raise ValueError(f"tau must be > 0, got {self.tau!r}")

    def window_periods(self, sample_period: float) -> int:
        n = int(round(self.tau / sample_period))
        if n < 2:
            raise ValueError(
                f"tau={self.tau!r} spans fewer than 2 control periods of {sample_period!r}"
            )
        return n


@lru_cache(maxsize=64)
def _interval_weights(n: int) -> np.ndarray:
    # (6/tau^3) * int_{s_j}^{s_{j+1}} s (tau - s) ds, in units where h = 1; sums to 1
    s = np.arange(n + 1, dtype=float)
    antideriv = n * s**2 / 2.0 - s**3 / 3.0
    w = 6.0 * np.diff(antideriv) / n**3
    w.setflags(write=False)
    return w


def f_est(
    delta_I: Sequence[float],
    delta_beta: Sequence[float],
    a: float,
    sample_period: float,
    times: Optional[Sequence[float]] = None,
) -> float:
    """Sliding-window estimate of the lumped term ``F``.

    Evaluates ``-(6/tau^3) int_0^tau [(tau - 2s) dI + a s (tau - s) dbeta] ds``
    with ``dI`` linearly interpolated between samples and ``dbeta`` held
    constant over each sample interval. Integrating the ``dI`` term by parts
    turns this into a ``s (tau - s)``-weighted mean of the per-interval
    ``slope - a * dbeta``, which is what is computed.

    Args:
        delta_I: ``N + 1`` tracking-error samples ending at the current time.
        delta_beta: ``N`` control corrections, entry ``j`` held over
            ``[s_j, s_{j+1})``.
        a: Ultra-local input gain.
        sample_period: Uniform spacing ``h``; ``tau = N h``.
        times: Optional sample times, checked for uniform spacing.
    """
    dI = np.asarray(delta_I, dtype=float)
    dB = np.asarray(delta_beta, dtype=float)
    n = dI.size - 1
    if n < 2:
        raise ValueError(f"window too short: need >= 3 samples of delta_I, got {dI.size}")
    if dB.size != n:
        raise ValueError(f"need {n} held delta_beta values for {dI.size} delta_I samples, got {dB.size}")
    if not sample_period > 0.0:
        raise ValueError(f"sample_period must be > 0, got {sample_period!r}")
    if times is not None:
        ts = np.asarray(times, dtype=float)
        if ts.size != dI.size or not np.allclose(np.diff(ts), sample_period, rtol=1e-9, atol=1e-12):
            raise ValueError("window is not uniformly sampled at sample_period")
    return float(_interval_weights(n) @ (np.diff(dI) / sample_period - a * dB))


def ip_control(delta_I: float, f_est: float, cfg: UltraLocalConfig) -> float:
    """Intelligent proportional correction ``-(F_est + Kp dI) / a``."""
    if not math.isfinite(f_est):
        raise ValueError(f"f_est must be finite, got {f_est!r}")
    return -(f_est + cfg.Kp * delta_I) / cfg.a


@dataclass
class ControllerState:
    """Sliding window of the controller, owned by one simulation loop."""

    n: int
    sample_period: float
    beta_bounds: Optional[tuple[float, float]] = None
    times: deque = field(init=False)
    delta_I: deque = field(init=False)
    delta_beta: deque = field(init=False)
    last_f_est: float = math.nan
    last_delta_I: float = math.nan
    last_delta_beta: float = 0.0
    _feedforward: float = math.nan

    def __post_init__(self) -> None:
        self.times = deque(maxlen=self.n + 1)
        self.delta_I = deque(maxlen=self.n + 1)
        self.delta_beta = deque(maxlen=self.n)

    @classmethod
    def create(
        cls,
        cfg: UltraLocalConfig,
        sample_period: float,
        beta_bounds: Optional[tuple[float, float]] = None,
    ) -> "ControllerState":
        return cls(cfg.window_periods(sample_period), sample_period, beta_bounds)

    @property
    def warming_up(self) -> bool:
        return len(self.delta_I) <= self.n

    def observe_applied(self, beta: float) -> None:
        """Replace the last stored correction with what was actually applied."""
        if self.delta_beta:
            self.delta_beta[-1] = beta - self._feedforward


def controller_step(
    measured_I: float,
    t: float,
    reference: ReferenceSample,
    state: ControllerState,
    cfg: UltraLocalConfig,
    beta_ff: Optional[float] = None,
) -> float:
    """One sample of the closed loop; returns the pre-clamp beta command.

    ``beta_ff`` defaults to ``reference.beta_flat``. The stored correction is
    clipped to ``state.beta_bounds`` so the estimator sees the input the plant
    can actually receive. During warm-up (window not yet full) the correction
    is zero.
    """
    if state.times:
        last = state.times[-1]
        if not t > last:
            raise ValueError(f"controller time went from {last!r} to {t!r}")
        if abs((t - last) - state.sample_period) > 1e-9 * max(1.0, abs(t)):
            raise ValueError(
                f"non-uniform sampling: step {t - last!r} != period {state.sample_period!r}"
            )
    ff = reference.beta_flat if beta_ff is None else beta_ff
    dI = measured_I - reference.I_ref
    state.times.append(t)
    state.delta_I.append(dI)

    if state.warming_up:
        estimate = math.nan
        dbeta = 0.0
    else:
        estimate = f_est(state.delta_I, state.delta_beta, cfg.a, state.sample_period)
        dbeta = ip_control(dI, estimate, cfg)

    command = ff + dbeta
    known = command
    if state.beta_bounds is not None:
        lo, hi = state.beta_bounds
        known = min(hi, max(lo, command))
    state.delta_beta.append(known - ff)
    state._feedforward = ff
    state.last_f_est = estimate
    state.last_delta_I = dI
    state.last_delta_beta = dbeta
    return command


class MFCController:
    """Flat feedforward plus iP feedback on the measured infected fraction.

    Only ``state.I`` is read from the plant. The feedforward uses the plan's
    control at the middle of each hold period (see :func:`feedforward`).
    """

    def __init__(
        self,
        plan: PlanParams,
        cfg: UltraLocalConfig,
        sample_period: float,
        beta_bounds: Optional[tuple[float, float]] = None,
        hold: str = "midpoint",
    ):
        self.plan = plan
        self.cfg = cfg
        self.sample_period = sample_period
        self.hold = hold
        self.state = ControllerState.create(cfg, sample_period, beta_bounds)
        self.log: list[tuple[float, float, float]] = []

    def __call__(self, t: float, plant_state: EpidemicState) -> float:
        ref = reference_at(t, self.plan)
        ff = feedforward(t, self.plan, self.sample_period, self.hold)
        command = controller_step(plant_state.I, t, ref, self.state, self.cfg, beta_ff=ff)
        self.log.append((self.state.last_delta_I, self.state.last_f_est, self.state.last_delta_beta))
        return command

    def observe_applied(self, beta: float) -> None:
        self.state.observe_applied(beta)
