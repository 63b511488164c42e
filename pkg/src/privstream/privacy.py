"""Calibrated Gaussian noise mechanisms and GDP budget bookkeeping.

All mechanisms are pure functions of their arguments given an explicit
:class:`NoiseSource`; nothing here keeps hidden random state.  A budget of
``math.inf`` is a first-class sentinel that turns every mechanism into the
identity map, which is how exact non-private baselines are produced.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .errors import AccountingError, DomainError

INFINITE_BUDGET = math.inf


@dataclass
class PrivacyBudget:
    """Gaussian-DP budget, either a common ``mu`` or one value per step.

    ``mu = math.inf`` disables noise injection entirely and recovers the
    non-private algorithms exactly.
    """

    mu: float = INFINITE_BUDGET
    per_step: Optional[Sequence[float]] = None

    def __post_init__(self):
        if not (self.mu > 0):
            raise DomainError(f"budget mu must be positive, got {self.mu}")
        if self.per_step is not None:
            ps = np.asarray(self.per_step, dtype=float)
            if ps.size == 0 or not np.all(ps > 0):
                raise DomainError("per-step budgets must be a non-empty "
                                  "sequence of positive values")
            self.per_step = ps

    @property
    def is_private(self) -> bool:
        return not (self.per_step is None and math.isinf(self.mu))

    def mu_at(self, n: int) -> float:
        """Budget applied to the ``n``-th individual (1-based)."""
        if self.per_step is None:
            return self.mu
        if not 1 <= n <= len(self.per_step):
            raise AccountingError(f"no per-step budget for step {n}")
        return float(self.per_step[n - 1])

    def iterate_budget(self) -> float:
        """GDP level of the whole released iterate path (max over steps)."""
        if self.per_step is not None:
            return compose_parallel(self.per_step)
        return self.mu

    @classmethod
    def non_private(cls) -> "PrivacyBudget":
        return cls(mu=INFINITE_BUDGET)


@dataclass(frozen=True)
class Sensitivity:
    """Global l2 sensitivity of a released statistic."""

    value: float

    def __post_init__(self):
        if not (self.value >= 0 and math.isfinite(self.value)):
            raise DomainError(
                f"sensitivity must be finite and >= 0, got {self.value}")


class NoiseSource:
    """Reproducible random stream identified by ``(seed, stream)``.

    The same pair always replays the same draw sequence; distinct stream
    ids (and children) are statistically independent.  Instances are not
    shareable across concurrent consumers; give each replication its own.
    """

    def __init__(self, seed: int, stream: int = 0, _spawn_key=()):
        self.seed = int(seed)
        self.stream = int(stream)
        self._spawn_key = tuple(_spawn_key) + (self.stream,)
        self._generator: Optional[np.random.Generator] = None

    @property
    def generator(self) -> np.random.Generator:
        if self._generator is None:
            seq = np.random.SeedSequence(entropy=self.seed,
                                         spawn_key=self._spawn_key)
            self._generator = np.random.default_rng(seq)
        return self._generator

    def child(self, k: int) -> "NoiseSource":
        """Derived independent stream; children never collide with parents."""
        return NoiseSource(self.seed, k, _spawn_key=self._spawn_key)

    def standard_normal(self, shape) -> np.ndarray:
        return self.generator.standard_normal(shape)

    def uniform(self, shape) -> np.ndarray:
        return self.generator.random(shape)

    def __repr__(self):
        return f"NoiseSource(seed={self.seed}, key={self._spawn_key})"


def gaussian_mechanism(value, sens: Sensitivity, mu: float,
                       rng: NoiseSource) -> np.ndarray:
    """Release ``value + (sens/mu) * Z`` with ``Z`` standard normal.

    With ``mu = inf`` the value is returned unchanged and no draw is
    consumed from ``rng``.
    """
    v = np.asarray(value, dtype=float)
    if not np.all(np.isfinite(v)):
        raise DomainError("gaussian_mechanism requires finite input")
    if not isinstance(sens, Sensitivity):
        sens = Sensitivity(float(sens))
    if not (mu > 0):
        raise DomainError(f"mu must be positive, got {mu}")
    if math.isinf(mu):
        return v.copy()
    z = rng.standard_normal(v.shape)
    return v + (sens.value / mu) * z


def symmetric_normal_matrix(dim: int, rng: NoiseSource) -> np.ndarray:
    """Symmetric matrix with i.i.d. standard-normal upper triangle
    (diagonal included), mirrored exactly onto the lower triangle."""
    iu = np.triu_indices(dim)
    draws = rng.standard_normal(iu[0].size)
    w = np.zeros((dim, dim))
    w[iu] = draws
    w.T[iu] = draws
    return w


def matrix_gaussian_mechanism(matrix, scale: float,
                              rng: NoiseSource) -> np.ndarray:
    """Add ``scale * W`` to a symmetric matrix, ``W`` as in
    :func:`symmetric_normal_matrix`.  Output is exactly symmetric.

    Callers own budget accounting across repeated invocations; one call
    is one release.
    """
    m = np.asarray(matrix, dtype=float)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise DomainError(f"expected a square matrix, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise DomainError("matrix_gaussian_mechanism requires finite input")
    if np.max(np.abs(m - m.T), initial=0.0) > 1e-10:
        raise DomainError("input matrix is asymmetric beyond 1e-10")
    if not (scale >= 0):
        raise DomainError(f"noise scale must be >= 0, got {scale}")
    # exact symmetrization: for bitwise-symmetric input this is the identity
    m = 0.5 * (m + m.T)
    if scale == 0.0:
        return m
    return m + scale * symmetric_normal_matrix(m.shape[0], rng)


def compose_parallel(budgets: Sequence[float]) -> float:
    """GDP level of mechanisms run on disjoint data: the maximum budget."""
    ba = np.asarray(budgets, dtype=float)
    if ba.size == 0:
        raise AccountingError("cannot compose an empty budget sequence")
    if not np.all(ba > 0):
        raise AccountingError("budgets must all be positive")
    return float(np.max(ba))


def plugin_release_budget(mu: float) -> float:
    """Budget of one joint release of the averaged iterate and both
    privatized covariance components: ``sqrt(3) * mu``."""
    if not (mu > 0):
        raise DomainError(f"mu must be positive, got {mu}")
    return math.sqrt(3.0) * mu
