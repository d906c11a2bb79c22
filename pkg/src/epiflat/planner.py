"""Closed-form open-loop plans for the SIR model with ``R`` as flat output.

The target is an exponentially decaying infected fraction
``I_ref(t) = I0 exp(-lam t)`` starting from ``R(0) = 0``. Flatness then gives

    R_ref(t)  = (gamma I0 / lam) (1 - exp(-lam t))
    S_ref(t)  = 1 - R_ref(t) - I_ref(t)
    beta_flat = (gamma - lam) / S_ref(t)

and the plan is feasible iff ``gamma I0 < lam < gamma``.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Optional

import numpy as np


class PlanBoundsWarning(UserWarning):
    """The unclamped open-loop control leaves the actuator bounds."""


def lambda_accept(gamma: float, I0: float, beta_accept: float) -> float:
    """Decay rate whose open-loop control tends to ``beta_accept``.

    Positive root of ``lam**2 + (beta_accept - gamma) lam - gamma I0 beta_accept``.
    When ``gamma < beta_accept`` the textbook form cancels badly for small
    ``I0``, so the root is taken from the product of roots instead.
    """
    if not gamma > 0.0:
        raise ValueError(f"gamma must be > 0, got {gamma!r}")
    if not 0.0 < I0 < 1.0:
        raise ValueError(f"I0 must lie in (0, 1), got {I0!r}")
    if not beta_accept > 0.0:
        raise ValueError(f"beta_accept must be > 0, got {beta_accept!r}")
    diff = gamma - beta_accept
    root = math.sqrt(accept_discriminant(gamma, I0, beta_accept))
    if diff >= 0.0:
        return 0.5 * (diff + root)
    return 2.0 * gamma * I0 * beta_accept / (root - diff)


def accept_discriminant(gamma: float, I0: float, beta_accept: float) -> float:
    return (gamma - beta_accept) ** 2 + 4.0 * gamma * I0 * beta_accept


@dataclass(frozen=True)
class PlanParams:
    """Planner inputs. Give exactly one of ``lam`` and ``beta_accept``."""

    gamma: float
    I0: float
    lam: Optional[float] = None
    beta_accept: Optional[float] = None
    beta_lower: Optional[float] = None
    beta_upper: Optional[float] = None

    def __post_init__(self) -> None:
        if not self.gamma > 0.0:
            raise ValueError(f"gamma must be > 0, got {self.gamma!r}")
        if not 0.0 <= self.I0 <= 1.0:
            raise ValueError(f"I0 must lie in [0, 1], got {self.I0!r}")
        if (self.lam is None) == (self.beta_accept is None):
            raise ValueError("set exactly one of lam and beta_accept")
        if self.beta_accept is not None:
            lo, hi = self.beta_lower, self.beta_upper
            if lo is not None and not lo < self.beta_accept:
                raise ValueError(f"need beta_lower < beta_accept, got {lo!r} >= {self.beta_accept!r}")
            if hi is not None and not self.beta_accept < hi:
                raise ValueError(f"need beta_accept < beta_upper, got {self.beta_accept!r} >= {hi!r}")
        lam = self.rate
        if not self.gamma * self.I0 < lam:
            raise ValueError(
                f"infeasible plan: need gamma*I0 < lambda (S(inf) > 0), "
                f"got gamma*I0={self.gamma * self.I0!r}, lambda={lam!r}"
            )
        if not lam < self.gamma:
            raise ValueError(
                f"infeasible plan: need lambda < gamma (beta_flat > 0), "
                f"got lambda={lam!r}, gamma={self.gamma!r}"
            )

    @property
    def rate(self) -> float:
        """The decay rate actually used, derived from ``beta_accept`` if needed."""
        if self.lam is not None:
            return self.lam
        return lambda_accept(self.gamma, self.I0, self.beta_accept)


@dataclass(frozen=True)
class ReferenceSample:
    t: float
    I_ref: float
    R_ref: float
    S_ref: float
    beta_flat: float


@dataclass(frozen=True)
class PlanSummary:
    lambda_used: float
    beta_flat_limit: float
    S_infinity: float
    R_infinity: float
    delta_accept: Optional[float]
    warnings: tuple[str, ...] = ()


def reference_at(t: float, params: PlanParams) -> ReferenceSample:
    """Evaluate the reference and its open-loop control at time ``t >= 0``."""
    if not t >= 0.0:
        raise ValueError(f"t must be >= 0, got {t!r}")
    lam = params.rate
    decay = math.exp(-lam * t)
    I_ref = params.I0 * decay
    R_ref = params.gamma * params.I0 / lam * (1.0 - decay)
    S_ref = 1.0 - R_ref - I_ref
    if not S_ref > 0.0:
        raise ValueError(f"S_ref(t={t!r}) = {S_ref!r} <= 0: gamma*I0 < lambda is violated")
    return ReferenceSample(t, I_ref, R_ref, S_ref, (params.gamma - lam) / S_ref)


def reference_table(times, params: PlanParams) -> dict[str, np.ndarray]:
    """Vectorised :func:`reference_at`; returns columns keyed like ReferenceSample."""
    t = np.asarray(times, dtype=float)
    if np.any(t < 0.0):
        raise ValueError("reference times must be >= 0")
    lam = params.rate
    decay = np.exp(-lam * t)
    I_ref = params.I0 * decay
    R_ref = params.gamma * params.I0 / lam * (1.0 - decay)
    S_ref = 1.0 - R_ref - I_ref
    return {
        "t": t,
        "I_ref": I_ref,
        "R_ref": R_ref,
        "S_ref": S_ref,
        "beta_flat": (params.gamma - lam) / S_ref,
    }


def bounds_violations(params: PlanParams) -> list[str]:
    """Describe where the unclamped ``beta_flat`` leaves the actuator bounds.

    ``beta_flat`` increases monotonically from ``beta_flat(0)`` to its limit,
    so checking both ends is enough.
    """
    first = reference_at(0.0, params).beta_flat
    last = _beta_limit(params.gamma, params.I0, params.rate)
    msgs = []
    if params.beta_lower is not None and first < params.beta_lower:
        msgs.append(f"beta_flat(0) = {first:.6g} is below beta_lower = {params.beta_lower:.6g}")
    if params.beta_upper is not None and last > params.beta_upper:
        msgs.append(f"lim beta_flat = {last:.6g} exceeds beta_upper = {params.beta_upper:.6g}")
    return msgs


def _beta_limit(gamma: float, I0: float, lam: float) -> float:
    return lam * (gamma - lam) / (lam - gamma * I0)


def plan_summary(params: PlanParams) -> PlanSummary:
    """Long-run values of the plan; warns if the control leaves the bounds."""
    lam = params.rate
    g, I0 = params.gamma, params.I0
    msgs = bounds_violations(params)
    for msg in msgs:
        warnings.warn(msg, PlanBoundsWarning, stacklevel=2)
    return PlanSummary(
        lambda_used=lam,
        beta_flat_limit=_beta_limit(g, I0, lam),
        S_infinity=1.0 - g * I0 / lam,
        R_infinity=g * I0 / lam,
        delta_accept=None
        if params.beta_accept is None
        else accept_discriminant(g, I0, params.beta_accept),
        warnings=tuple(msgs),
    )


@dataclass(frozen=True)
class RelaxationReport:
    lambda_a: float
    lambda_b: float
    S_infinity_a: float
    S_infinity_b: float
    relation: str
    claim_holds: bool


def compare_relaxation(params_a: PlanParams, params_b: PlanParams) -> RelaxationReport:
    """Compare the final susceptible fractions of two plans.

    A slower decay (smaller lambda, i.e. relaxed distancing) must leave fewer
    people uninfected; ``claim_holds`` is that implication checked on the pair.
    """
    if params_a.gamma != params_b.gamma or params_a.I0 != params_b.I0:
        raise ValueError("compare_relaxation needs plans with the same gamma and I0")
    la, lb = params_a.rate, params_b.rate
    sa = 1.0 - params_a.gamma * params_a.I0 / la
    sb = 1.0 - params_b.gamma * params_b.I0 / lb
    relation = "<" if sa < sb else (">" if sa > sb else "=")
    if la < lb:
        holds = sa < sb
    elif la > lb:
        holds = sa > sb
    else:
        holds = sa == sb
    return RelaxationReport(la, lb, sa, sb, relation, holds)


HOLD_MODES = ("midpoint", "left")


def feedforward(t: float, params: PlanParams, period: float, hold: str = "midpoint") -> float:
    """Open-loop beta to hold over ``[t, t + period)``.

    ``"midpoint"`` samples ``beta_flat`` in the middle of the hold interval,
    which makes the zero-order-hold error second order in ``period``;
    ``"left"`` samples at ``t`` and is first order.
    """
    if hold == "midpoint":
        return reference_at(t + 0.5 * period, params).beta_flat
    if hold == "left":
        return reference_at(t, params).beta_flat
    raise ValueError(f"hold must be one of {HOLD_MODES}, got {hold!r}")
