"""SIR / SEIR state spaces, vector fields and flat-output identities.

All quantities are population fractions and rates are per day. The infection
rate ``beta`` is the control input; ``R`` is the flat output of both models.

The ``*_field`` functions work on plain float tuples and are what the
integrator calls in its inner loop. ``sir_rhs`` and ``seir_rhs`` are the
validated public versions that take an :class:`EpidemicState`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

CONSERVATION_TOL = 1e-9


@dataclass(frozen=True)
class EpidemicState:
    """Population fractions at one instant. ``E`` is only set for SEIR."""

    S: float
    I: float
    R: float
    E: float | None = None

    @property
    def is_seir(self) -> bool:
        return self.E is not None

    def total(self) -> float:
        return self.S + self.I + self.R + (self.E or 0.0)

    def validate(self, tol: float = CONSERVATION_TOL) -> None:
        """Raise ``ValueError`` if a component is negative or the sum is off 1."""
        for name, value in self._named():
            if not math.isfinite(value):
                raise ValueError(f"{name} is not finite: {value!r}")
            if value < 0.0:
                raise ValueError(f"{name} must be non-negative, got {value!r}")
        drift = abs(self.total() - 1.0)
        if drift > tol:
            raise ValueError(f"compartments must sum to 1 (|sum - 1| = {drift:.3e})")

    def as_tuple(self) -> tuple[float, ...]:
        """Integrator layout: ``(S, I, R)`` or ``(S, E, I, R)``."""
        if self.E is None:
            return (self.S, self.I, self.R)
        return (self.S, self.E, self.I, self.R)

    @classmethod
    def from_tuple(cls, y: Sequence[float]) -> "EpidemicState":
        if len(y) == 3:
            return cls(S=float(y[0]), I=float(y[1]), R=float(y[2]))
        if len(y) == 4:
            return cls(S=float(y[0]), E=float(y[1]), I=float(y[2]), R=float(y[3]))
        raise ValueError(f"expected 3 or 4 components, got {len(y)}")

    def clamped(self) -> "EpidemicState":
        """Copy with every component clipped to [0, 1], for reporting only."""

        def clip(v: float) -> float:
            return min(1.0, max(0.0, v))

        return EpidemicState(
            S=clip(self.S),
            I=clip(self.I),
            R=clip(self.R),
            E=None if self.E is None else clip(self.E),
        )

    def _named(self) -> Iterable[tuple[str, float]]:
        yield "S", self.S
        yield "I", self.I
        yield "R", self.R
        if self.E is not None:
            yield "E", self.E


@dataclass(frozen=True)
class SirParams:
    beta: float
    gamma: float
    beta_lower: float
    beta_upper: float

    def __post_init__(self) -> None:
        if not self.gamma > 0.0:
            raise ValueError(f"gamma must be > 0, got {self.gamma!r}")
        if not 0.0 < self.beta_lower <= self.beta <= self.beta_upper:
            raise ValueError(
                "need 0 < beta_lower <= beta <= beta_upper, got "
                f"{self.beta_lower!r}, {self.beta!r}, {self.beta_upper!r}"
            )


@dataclass(frozen=True)
class SeirParams(SirParams):
    alpha: float = field(default=math.nan)

    def __post_init__(self) -> None:
        super().__post_init__()
        if not self.alpha > 0.0:
            raise ValueError(f"alpha must be > 0, got {self.alpha!r}")


def sir_field(y: Sequence[float], beta: float, gamma: float) -> tuple[float, float, float]:
    S, I, _ = y
    infection = beta * I * S
    recovery = gamma * I
    return (-infection, infection - recovery, recovery)


def seir_field(
    y: Sequence[float], beta: float, gamma: float, alpha: float
) -> tuple[float, float, float, float]:
    S, E, I, _ = y
    infection = beta * I * S
    incubation = alpha * E
    recovery = gamma * I
    return (-infection, infection - incubation, incubation - recovery, recovery)


def _check_rates(**rates: float) -> None:
    for name, value in rates.items():
        if not (math.isfinite(value) and value > 0.0):
            raise ValueError(f"{name} must be a positive finite rate, got {value!r}")


def _check_nonnegative(state: EpidemicState) -> None:
    for name, value in state._named():
        if not math.isfinite(value) or value < 0.0:
            raise ValueError(f"state component {name} must be >= 0, got {value!r}")


def sir_rhs(state: EpidemicState, beta: float, gamma: float) -> tuple[float, float, float]:
    """Time derivative ``(dS, dI, dR)`` of the SIR model.

    Args:
        state: Current fractions; ``E`` must be unset.
        beta: Infection rate (the control input).
        gamma: Recovery rate.

    Returns:
        ``(-beta*I*S, beta*I*S - gamma*I, gamma*I)``.

    Raises:
        ValueError: on negative components or non-positive rates.
    """
    if state.E is not None:
        raise ValueError("sir_rhs got an SEIR state (E is set)")
    _check_nonnegative(state)
    _check_rates(beta=beta, gamma=gamma)
    return sir_field(state.as_tuple(), beta, gamma)


def seir_rhs(state: EpidemicState, params: SeirParams) -> tuple[float, float, float, float]:
    """Time derivative ``(dS, dE, dI, dR)`` of the SEIR model."""
    if state.E is None:
        raise ValueError("seir_rhs needs a state with the exposed fraction E")
    _check_nonnegative(state)
    return seir_field(state.as_tuple(), params.beta, params.gamma, params.alpha)


@dataclass
class FlatnessReport:
    """Largest residual of each flat-output identity over a trajectory.

    ``singular`` lists the indices of samples with ``I == 0`` or ``S == 0``,
    where the expression for beta is undefined; they do not enter the maxima.
    """

    max_residual: dict[str, float]
    checked: int
    singular: list[int]

    @property
    def worst(self) -> float:
        return max(self.max_residual.values(), default=0.0)


def check_flat_identities(
    trajectory: Iterable[tuple[float, EpidemicState, float]],
    gamma: float,
    alpha: float | None = None,
) -> FlatnessReport:
    """Evaluate the flat parametrisation in ``R`` on every trajectory sample.

    Derivatives come from the vector field itself, so each residual is an
    algebraic identity and should sit at rounding level. For SIR the checks
    are ``I = R'/gamma``, ``S = 1 - R - R'/gamma`` and ``beta = -S'/(I S)``.
    For SEIR (``alpha`` given) they are ``I = R'/gamma``,
    ``E = (I' + gamma I)/alpha``, ``S = 1 - R - I - E`` and ``beta = -S'/(I S)``.
    """
    _check_rates(gamma=gamma)
    seir = alpha is not None
    if seir:
        _check_rates(alpha=alpha)
        keys = ("I", "E", "S", "beta")
    else:
        keys = ("I", "S", "beta")
    worst = dict.fromkeys(keys, 0.0)
    singular: list[int] = []
    checked = 0

    for idx, (_, state, beta) in enumerate(trajectory):
        if seir != state.is_seir:
            raise ValueError(f"sample {idx}: state layout does not match alpha={alpha!r}")
        if seir:
            dS, _, dI, dR = seir_field(state.as_tuple(), beta, gamma, alpha)
        else:
            dS, dI, dR = sir_field(state.as_tuple(), beta, gamma)

        res = {"I": state.I - dR / gamma}
        if seir:
            res["E"] = state.E - (dI + gamma * state.I) / alpha
            res["S"] = state.S - (1.0 - state.R - state.I - state.E)
        else:
            res["S"] = state.S - (1.0 - state.R - dR / gamma)

        if state.I == 0.0 or state.S == 0.0:
            singular.append(idx)
            continue
        res["beta"] = beta + dS / (state.I * state.S)
        checked += 1
        for key in keys:
            worst[key] = max(worst[key], abs(res[key]))

    return FlatnessReport(max_residual=worst, checked=checked, singular=singular)
