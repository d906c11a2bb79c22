"""Fixed-step RK4 with a zero-order-hold control loop.

The control input is sampled once per control period, optionally perturbed by
noise, clamped to the actuator bounds and then held over ``substeps`` RK4
steps. States are kept as plain float tuples in the inner loop.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

from .models import EpidemicState

Vector = tuple[float, ...]
Field = Callable[[float, Vector], Sequence[float]]
Plant = Callable[[float, Vector, float], Sequence[float]]
Controller = Callable[[float, EpidemicState], float]
NoiseSource = Callable[[], float]

STATE_MARGIN = 1e-6
NOISE_TARGETS = ("actuation", "measurement")


class SimulationError(RuntimeError):
    """Raised when a run produces non-finite values or leaves the simplex."""

    def __init__(self, message: str, step: int | None = None):
        if step is not None:
            message = f"step {step}: {message}"
        super().__init__(message)
        self.step = step


@dataclass(frozen=True)
class SimGrid:
    """Time grid in days. The default sampling period is two hours."""

    t0: float = 0.0
    t_end: float = 350.0
    control_period: float = 1.0 / 12.0
    substeps: int = 8

    def __post_init__(self) -> None:
        if not self.control_period > 0.0:
            raise ValueError(f"control_period must be > 0, got {self.control_period!r}")
        if int(self.substeps) != self.substeps or self.substeps < 1:
            raise ValueError(f"substeps must be an integer >= 1, got {self.substeps!r}")
        if self.t_end < self.t0:
            raise ValueError(f"t_end ({self.t_end!r}) is before t0 ({self.t0!r})")

    @property
    def n_periods(self) -> int:
        # a trailing partial period is dropped
        return int(math.floor((self.t_end - self.t0) / self.control_period + 1e-9))

    @property
    def dt(self) -> float:
        return self.control_period / self.substeps

    def time(self, k: int) -> float:
        return self.t0 + k * self.control_period


@dataclass(frozen=True)
class SimRecord:
    """State at the start of a control period and the input held over it."""

    t: float
    state: EpidemicState
    beta_commanded: float
    beta_applied: float
    clamped: bool


@dataclass
class Trajectory:
    records: list[SimRecord] = field(default_factory=list)
    final_t: float = 0.0
    final_state: Optional[EpidemicState] = None

    def __len__(self) -> int:
        return len(self.records)

    @property
    def clamp_count(self) -> int:
        return sum(r.clamped for r in self.records)


def _rk4(f: Field, t: float, y: Vector, dt: float) -> Vector:
    half = 0.5 * dt
    k1 = f(t, y)
    k2 = f(t + half, [a + half * b for a, b in zip(y, k1)])
    k3 = f(t + half, [a + half * b for a, b in zip(y, k2)])
    k4 = f(t + dt, [a + dt * b for a, b in zip(y, k3)])
    sixth = dt / 6.0
    return tuple(
        [a + sixth * (p + 2.0 * q + 2.0 * r + s) for a, p, q, r, s in zip(y, k1, k2, k3, k4)]
    )


def _rk4_input(plant: Plant, t: float, y: Vector, dt: float, u: float) -> Vector:
    # _rk4 with the held input passed through, avoiding a closure per period
    half = 0.5 * dt
    k1 = plant(t, y, u)
    k2 = plant(t + half, [a + half * b for a, b in zip(y, k1)], u)
    k3 = plant(t + half, [a + half * b for a, b in zip(y, k2)], u)
    k4 = plant(t + dt, [a + dt * b for a, b in zip(y, k3)], u)
    sixth = dt / 6.0
    return tuple(
        [a + sixth * (p + 2.0 * q + 2.0 * r + s) for a, p, q, r, s in zip(y, k1, k2, k3, k4)]
    )


def rk4_step(state, rhs: Field, dt: float, t: float = 0.0):
    """Advance ``state`` by one classical RK4 step of length ``dt``.

    ``state`` may be an :class:`EpidemicState` (returned as the same type) or a
    sequence of floats; ``rhs(t, y)`` always sees a float tuple in the
    integrator layout.
    """
    if not dt > 0.0:
        raise ValueError(f"dt must be > 0, got {dt!r}")
    wrapped = isinstance(state, EpidemicState)
    y = state.as_tuple() if wrapped else tuple(float(v) for v in state)
    out = _rk4(rhs, t, y, dt)
    if not all(math.isfinite(v) for v in out):
        raise SimulationError(f"non-finite state after RK4 step at t={t!r}: {out!r}")
    return EpidemicState.from_tuple(out) if wrapped else out


def simulate(
    initial: EpidemicState,
    plant: Plant,
    controller: Controller,
    grid: SimGrid,
    beta_bounds: tuple[float, float],
    noise: NoiseSource | None = None,
    noise_target: str = "actuation",
) -> Trajectory:
    """Run the sampled control loop over ``grid``.

    Per control period: ``controller(t, state)`` returns the commanded beta;
    with actuation noise the plant receives ``clip(command + eps)``, with
    measurement noise it receives ``clip(command)`` while the controller is
    told ``clip(command) + eps``. Controllers exposing ``observe_applied``
    are notified of the beta they can know about after every period.

    Args:
        initial: Initial state; ``E`` set selects the SEIR layout.
        plant: ``plant(t, y, beta)`` returning dy/dt in the same layout.
        controller: Per-sample control law.
        grid: Time grid and substep count.
        beta_bounds: ``(lower, upper)`` actuator limits.
        noise: Zero-argument callable drawing one perturbation per period.
        noise_target: ``"actuation"`` or ``"measurement"``.

    Returns:
        One :class:`SimRecord` per full control period plus the final state.

    Raises:
        SimulationError: non-finite beta or state, or a state component
            outside ``[-1e-6, 1 + 1e-6]``.
    """
    lo, hi = beta_bounds
    if not 0.0 < lo <= hi:
        raise ValueError(f"beta bounds must satisfy 0 < lower <= upper, got {beta_bounds!r}")
    if noise_target not in NOISE_TARGETS:
        raise ValueError(f"noise_target must be one of {NOISE_TARGETS}, got {noise_target!r}")

    observe = getattr(controller, "observe_applied", None)
    dt = grid.dt
    y = initial.as_tuple()
    out = Trajectory()

    for k in range(grid.n_periods):
        t = grid.time(k)
        state = EpidemicState.from_tuple(y)
        command = float(controller(t, state))
        if not math.isfinite(command):
            raise SimulationError(f"controller returned non-finite beta {command!r}", step=k)

        eps = noise() if noise is not None else 0.0
        if noise_target == "actuation":
            raw = command + eps
            known = min(hi, max(lo, command))
        else:
            raw = command
            known = min(hi, max(lo, command)) + eps
        applied = min(hi, max(lo, raw))
        out.records.append(SimRecord(t, state, command, applied, clamped=applied != raw))
        if observe is not None:
            observe(known)

        lo_state, hi_state = -STATE_MARGIN, 1.0 + STATE_MARGIN
        for j in range(grid.substeps):
            y = _rk4_input(plant, t + j * dt, y, dt, applied)
            if not (lo_state <= min(y) and max(y) <= hi_state and math.isfinite(sum(y))):
                raise SimulationError(f"state left the unit simplex: {y!r}", step=k)

    out.final_t = grid.time(grid.n_periods)
    out.final_state = EpidemicState.from_tuple(y)
    return out
