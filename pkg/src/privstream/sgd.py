"""Noisy one-pass SGD with Polyak-Ruppert averaging.

The recursion is

    theta_n = theta_{n-1} - gamma_n * (psi(theta_{n-1}, z_n)
                                       + (2 b0 / mu_n) * xi_n)

with ``gamma_n = gamma * n**(-alpha)`` and ``xi_n`` a fresh standard
normal vector.  Under an infinite budget the noise term vanishes and the
trajectory is bit-for-bit classical averaged SGD (no draws are consumed).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Optional

import numpy as np

from .errors import DomainError
from .models import LossModel, Observation
from .privacy import NoiseSource, PrivacyBudget


@dataclass(frozen=True)
class StepSchedule:
    """Polynomially decaying step size ``gamma * n**(-alpha)``."""

    gamma: float = 0.5
    alpha: float = 0.51

    def __post_init__(self):
        if not (self.gamma > 0):
            raise DomainError(f"gamma must be positive, got {self.gamma}")
        if not (0.5 < self.alpha < 1.0):
            raise DomainError(
                f"alpha must lie in (1/2, 1), got {self.alpha}")

    def gamma_at(self, n: int) -> float:
        return self.gamma * float(n) ** (-self.alpha)

    def gammas(self, n: int) -> np.ndarray:
        """Step sizes for steps 1..n as an array."""
        return self.gamma * np.arange(1, n + 1, dtype=float) ** (-self.alpha)


@dataclass
class SgdState:
    """Mutable state of one SGD run.

    ``theta_bar`` is maintained by the exact running-mean recursion
    ``bar_n = bar_{n-1} + (theta_n - bar_{n-1}) / n``; at ``n = 0`` it
    equals the initial point by convention.
    """

    model: LossModel
    schedule: StepSchedule
    budget: PrivacyBudget
    rng: Optional[NoiseSource]
    theta: np.ndarray
    theta_bar: np.ndarray = field(init=False)
    n: int = field(init=False, default=0)

    def __post_init__(self):
        self.theta = np.asarray(self.theta, dtype=float).copy()
        if self.theta.ndim != 1 or self.theta.size == 0:
            raise DomainError("initial point must be a non-empty vector")
        self.theta_bar = self.theta.copy()
        if self.budget.is_private and self.rng is None:
            raise DomainError("a private budget requires a NoiseSource")

    @property
    def dim(self) -> int:
        return self.theta.size


def step(state: SgdState, obs: Observation,
         gradient: Optional[np.ndarray] = None) -> SgdState:
    """Advance the state by one observation and return it.

    ``gradient`` may carry a precomputed ``psi(theta, obs)`` so callers
    that also feed the covariance accumulators do not evaluate it twice.
    On a non-finite observation the state is left untouched.
    """
    if not isinstance(obs, Observation):
        obs = Observation(np.asarray(obs[0]), obs[1])
    if obs.x.shape != state.theta.shape:
        raise DomainError(
            f"observation dimension {obs.x.shape} does not match "
            f"state dimension {state.theta.shape}")
    if not obs.is_finite():
        raise DomainError(f"non-finite observation at step {state.n + 1}")

    n = state.n + 1
    if gradient is None:
        gradient = state.model.psi(state.theta, obs.x, obs.y)
    g = gradient
    mu = state.budget.mu_at(n)
    if not math.isinf(mu):
        xi = state.rng.standard_normal(state.dim)
        g = gradient + (2.0 * state.model.b0 / mu) * xi
    state.theta = state.theta - state.schedule.gamma_at(n) * g
    state.n = n
    state.theta_bar = state.theta_bar + (state.theta - state.theta_bar) / n
    return state


def run_stream(model: LossModel, schedule: StepSchedule,
               budget: PrivacyBudget, initial,
               stream: Iterable[Observation],
               rng: Optional[NoiseSource] = None) -> SgdState:
    """Fold :func:`step` over ``stream`` exactly once, in order.

    Memory use is independent of the stream length.  An empty stream is
    rejected rather than silently returning the initial point.
    """
    state = SgdState(model=model, schedule=schedule, budget=budget,
                     rng=rng, theta=initial)
    for obs in stream:
        try:
            step(state, obs)
        except DomainError as exc:
            raise DomainError(f"stream rejected: {exc}") from exc
    if state.n == 0:
        raise DomainError("empty observation stream")
    return state
