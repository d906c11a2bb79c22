"""Algebraic differentiation of the infected fraction and recovery-rate estimation.

The differentiator is a causal least-squares polynomial fit over the last
``window_samples`` samples, differentiated at the newest one. It is exact on
polynomials up to ``fit_degree``.

With ``I`` and ``S`` measured, the SIR equation for ``I`` gives
``gamma = (beta I S - dI/dt) / I``. Because this expression contains no
derivative of ``gamma``, it stays usable when the recovery rate drifts in time.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable, Iterable, Sequence, Union

import numpy as np

from .models import EpidemicState, sir_field

DEFAULT_I_FLOOR = 1e-6


@dataclass(frozen=True)
class DifferentiatorConfig:
    window_samples: int = 25
    fit_degree: int = 2
    sample_period: float = 1.0 / 12.0

    def __post_init__(self) -> None:
        if self.fit_degree < 1:
            raise ValueError(f"fit_degree must be >= 1, got {self.fit_degree!r}")
        if self.window_samples < self.fit_degree + 2:
            raise ValueError(
                f"window_samples={self.window_samples!r} underdetermines a degree "
                f"{self.fit_degree} fit (need >= {self.fit_degree + 2})"
            )
        if not self.sample_period > 0.0:
            raise ValueError(f"sample_period must be > 0, got {self.sample_period!r}")


@lru_cache(maxsize=32)
def _end_derivative_weights(window: int, degree: int) -> np.ndarray:
    # fit on x in [-1, 0] (newest sample at 0); row 1 of the pseudo-inverse is d/dx at 0
    x = np.linspace(-1.0, 0.0, window)
    vander = np.vander(x, degree + 1, increasing=True)
    w = np.linalg.pinv(vander)[1] / (window - 1)
    w.setflags(write=False)
    return w


def diff_estimate(samples: Sequence[float], cfg: DifferentiatorConfig) -> float:
    """Derivative at the newest sample of the LS polynomial fit over the window.

    Samples are differenced against the newest one before weighting. The
    weights sum to zero so this changes nothing algebraically, but it keeps the
    rounding error independent of the signal's offset.
    """
    y = np.asarray(samples, dtype=float)
    if y.ndim != 1 or y.size != cfg.window_samples:
        raise ValueError(f"need exactly {cfg.window_samples} samples, got shape {y.shape}")
    w = _end_derivative_weights(cfg.window_samples, cfg.fit_degree)
    return float(w @ (y - y[-1])) / cfg.sample_period


@dataclass(frozen=True)
class GammaEstimate:
    t: float
    gamma_est: float
    valid: bool


def gamma_estimate(
    I: float,
    S: float,
    beta_applied: float,
    dI_est: float,
    t: float = math.nan,
    I_floor: float = DEFAULT_I_FLOOR,
) -> GammaEstimate:
    """Recovery rate from one sample: ``(beta I S - dI_est) / I``.

    Below ``I_floor`` the division is meaningless and an invalid estimate with
    ``gamma_est = nan`` is returned instead of raising.
    """
    if not (math.isfinite(S) and math.isfinite(beta_applied) and math.isfinite(dI_est)):
        return GammaEstimate(t, math.nan, False)
    if not I >= I_floor:
        return GammaEstimate(t, math.nan, False)
    return GammaEstimate(t, (beta_applied * I * S - dI_est) / I, True)


@dataclass
class GammaSeries:
    dI_est: np.ndarray
    gamma_est: np.ndarray
    valid: np.ndarray


def gamma_series(
    I: Sequence[float],
    S: Sequence[float],
    beta_applied: Sequence[float],
    cfg: DifferentiatorConfig,
    I_floor: float = DEFAULT_I_FLOOR,
) -> GammaSeries:
    """Run the estimator causally along a sampled record.

    ``beta_applied[k]`` is the input held over ``[t_k, t_{k+1})``. The fitted
    slope at ``t_k`` is driven by the input of the interval ending there, so
    estimate ``k`` pairs ``I[k], S[k]`` with ``beta_applied[k - 1]``.
    """
    I = np.asarray(I, dtype=float)
    S = np.asarray(S, dtype=float)
    beta = np.asarray(beta_applied, dtype=float)
    n = I.size
    if S.size != n or beta.size != n:
        raise ValueError("I, S and beta_applied must have the same length")
    W = cfg.window_samples
    dI = np.full(n, np.nan)
    gam = np.full(n, np.nan)
    valid = np.zeros(n, dtype=bool)
    for k in range(max(W - 1, 1), n):
        dI[k] = diff_estimate(I[k - W + 1 : k + 1], cfg)
        est = gamma_estimate(I[k], S[k], beta[k - 1], dI[k], I_floor=I_floor)
        gam[k] = est.gamma_est
        valid[k] = est.valid
    return GammaSeries(dI, gam, valid)


@dataclass
class IdentifiabilityReport:
    max_residual: float
    checked: int
    singular: list[int] = field(default_factory=list)
    skipped: bool = False
    note: str = ""


def rational_identifiability_check(
    trajectory: Iterable[tuple[float, EpidemicState]],
    betas: Sequence[float],
    gamma: Union[float, Callable[[float], float]],
) -> IdentifiabilityReport:
    """Check ``gamma = beta S - I'/I`` at each sample, ``I'`` from the vector field.

    A callable ``gamma`` means a time-varying recovery rate. The relation then
    hides a derivative of ``gamma``, so the check is skipped and a note is
    returned.
    """
    if callable(gamma):
        return IdentifiabilityReport(
            max_residual=math.nan,
            checked=0,
            skipped=True,
            note="gamma is time-varying; beta*S - I'/I no longer isolates it, check skipped",
        )
    worst = 0.0
    checked = 0
    singular: list[int] = []
    for idx, ((_, state), beta) in enumerate(zip(trajectory, betas, strict=True)):
        if state.I == 0.0 or state.S == 0.0:
            singular.append(idx)
            continue
        _, dI, _ = sir_field(state.as_tuple(), beta, gamma)
        worst = max(worst, abs(beta * state.S - dI / state.I - gamma))
        checked += 1
    return IdentifiabilityReport(max_residual=worst, checked=checked, singular=singular)
