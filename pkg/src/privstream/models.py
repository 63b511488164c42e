"""Regression families with bounded gradients via Mallow's weights.

Each family packages the loss value, the gradient ``psi``, the rank-one
Hessian factor ``m`` (``hessian = m m^T``), and the constants ``b0``
(gradient norm bound) and ``b1`` (bound on ``||m||^2``).  The gradient
bound is what calibrates the per-step privacy noise, so it is enforced
by construction, not by clipping.

The batch methods pair row ``i`` of every argument: they evaluate the
model at ``theta[i]`` on observation ``(x[i], y[i])``.  This is the form
the simulation engine consumes; the single-observation wrappers feed off
the same code path.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DomainError
from .privacy import Sensitivity

FAMILIES = ("huber_linear", "logistic", "expectile")


@dataclass
class Observation:
    """One data point: covariate vector ``x`` and response ``y``."""

    x: np.ndarray
    y: float

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=float)
        self.y = float(self.y)

    def is_finite(self) -> bool:
        return bool(np.all(np.isfinite(self.x)) and math.isfinite(self.y))


def mallow_weight(x) -> float:
    """Covariate downweighting ``min(1, 2 / ||x||^2)``; 1 at ``x = 0``."""
    x = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(x)):
        raise DomainError("mallow_weight requires finite covariates")
    return float(mallow_weights(x[None, :])[0])


def mallow_weights(X: np.ndarray) -> np.ndarray:
    """Row-wise Mallow weights for an ``(n, p)`` covariate matrix."""
    nsq = np.einsum("nd,nd->n", X, X)
    return np.minimum(1.0, 2.0 / np.maximum(nsq, 2.0))


def _as_batch(theta, x, y):
    theta = np.asarray(theta, dtype=float)
    x = np.asarray(x, dtype=float)
    if theta.shape != x.shape:
        raise DomainError(
            f"theta and x dimensions differ: {theta.shape} vs {x.shape}")
    return theta[None, :], x[None, :], np.asarray([y], dtype=float)


def _huber_slope(r: np.ndarray, c: float) -> np.ndarray:
    # continuous extension min(1, c/|r|): value 1 at r = 0
    a = np.abs(r)
    return np.where(a <= c, 1.0, c / np.maximum(a, c))


def _huber_value(r: np.ndarray, c: float) -> np.ndarray:
    a = np.abs(r)
    return np.where(a <= c, 0.5 * r * r, c * a - 0.5 * c * c)


class LossModel:
    """Base class; subclasses define the family-specific pieces."""

    family: str
    b0: float
    b1: float

    def psi(self, theta, x, y) -> np.ndarray:
        """Gradient of the per-observation loss at ``theta``."""
        t, xx, yy = _as_batch(theta, x, y)
        return self.psi_batch(t, xx, yy)[0]

    def hessian_factor(self, theta, x, y) -> np.ndarray:
        """Vector ``m`` with ``m m^T`` the per-observation Hessian."""
        t, xx, yy = _as_batch(theta, x, y)
        return self.hessian_factor_batch(t, xx, yy)[0]

    def loss(self, theta, x, y) -> float:
        t, xx, yy = _as_batch(theta, x, y)
        return float(self.loss_batch(t, xx, yy)[0])

    def psi_batch(self, theta, X, y) -> np.ndarray:
        raise NotImplementedError

    def hessian_factor_batch(self, theta, X, y) -> np.ndarray:
        raise NotImplementedError

    def loss_batch(self, theta, X, y) -> np.ndarray:
        raise NotImplementedError

    def sensitivity(self) -> Sensitivity:
        """Global l2 sensitivity of the gradient: ``2 * b0``."""
        return Sensitivity(2.0 * self.b0)


class HuberLinearModel(LossModel):
    """Huber-loss linear regression with Mallow's weights."""

    family = "huber_linear"

    def __init__(self, c: float = 1.345):
        if not (c > 0):
            raise DomainError(f"Huber truncation c must be positive, got {c}")
        self.c = float(c)
        self.b0 = math.sqrt(2.0) * self.c
        self.b1 = 2.0

    def psi_batch(self, theta, X, y):
        w = mallow_weights(X)
        r = y - np.einsum("nd,nd->n", X, theta)
        coef = _huber_slope(r, self.c) * r * w
        return -coef[:, None] * X

    def hessian_factor_batch(self, theta, X, y):
        w = mallow_weights(X)
        r = y - np.einsum("nd,nd->n", X, theta)
        scale = np.sqrt(w) * (np.abs(r) <= self.c)
        return scale[:, None] * X

    def loss_batch(self, theta, X, y):
        w = mallow_weights(X)
        r = y - np.einsum("nd,nd->n", X, theta)
        return _huber_value(r, self.c) * w


class LogisticModel(LossModel):
    """Weighted cross-entropy for labels coded {0, 1}."""

    family = "logistic"

    def __init__(self):
        self.b0 = math.sqrt(2.0)
        self.b1 = 0.5

    @staticmethod
    def _sigmoid(t):
        out = np.empty_like(t)
        pos = t >= 0
        out[pos] = 1.0 / (1.0 + np.exp(-t[pos]))
        e = np.exp(t[~pos])
        out[~pos] = e / (1.0 + e)
        return out

    def psi_batch(self, theta, X, y):
        w = mallow_weights(X)
        s = self._sigmoid(np.einsum("nd,nd->n", X, theta))
        return -((y - s) * w)[:, None] * X

    def hessian_factor_batch(self, theta, X, y):
        w = mallow_weights(X)
        s = self._sigmoid(np.einsum("nd,nd->n", X, theta))
        return np.sqrt(s * (1.0 - s) * w)[:, None] * X

    def loss_batch(self, theta, X, y):
        t = np.einsum("nd,nd->n", X, theta)
        w = mallow_weights(X)
        # -[y log s + (1-y) log(1-s)] = log(1+e^t) - y t, stably
        return (np.logaddexp(0.0, t) - y * t) * w


class ExpectileModel(LossModel):
    """Asymmetric (expectile) Huber regression at location ``tau``."""

    family = "expectile"

    def __init__(self, c: float = 1.345, tau: float = 0.5):
        if not (c > 0):
            raise DomainError(f"Huber truncation c must be positive, got {c}")
        if not (0.0 < tau < 1.0):
            raise DomainError(f"tau must lie in (0, 1), got {tau}")
        self.c = float(c)
        self.tau = float(tau)
        self.b0 = math.sqrt(2.0) * self.c * max(self.tau, 1.0 - self.tau)
        self.b1 = 2.0 * max(self.tau, 1.0 - self.tau)

    def _asym(self, r):
        return np.abs(self.tau - (r < 0))

    def psi_batch(self, theta, X, y):
        w = mallow_weights(X)
        r = y - np.einsum("nd,nd->n", X, theta)
        coef = self._asym(r) * (_huber_slope(r, self.c) * r * w)
        return -coef[:, None] * X

    def hessian_factor_batch(self, theta, X, y):
        w = mallow_weights(X)
        r = y - np.einsum("nd,nd->n", X, theta)
        scale = np.sqrt(self._asym(r) * w) * (np.abs(r) <= self.c)
        return scale[:, None] * X

    def loss_batch(self, theta, X, y):
        w = mallow_weights(X)
        r = y - np.einsum("nd,nd->n", X, theta)
        return self._asym(r) * _huber_value(r, self.c) * w


def make_model(family: str, c: float = 1.345, tau: float = 0.5) -> LossModel:
    """Construct a loss model by family name."""
    if family == "huber_linear":
        return HuberLinearModel(c=c)
    if family == "logistic":
        return LogisticModel()
    if family == "expectile":
        return ExpectileModel(c=c, tau=tau)
    raise DomainError(f"unknown model family {family!r}; "
                      f"expected one of {FAMILIES}")


def gradient(model: LossModel, theta, obs: Observation) -> np.ndarray:
    """Loss gradient at ``theta`` for one observation; ``||.||_2 <= b0``."""
    return model.psi(theta, obs.x, obs.y)


def hessian_factor(model: LossModel, theta, obs: Observation) -> np.ndarray:
    return model.hessian_factor(theta, obs.x, obs.y)


def sensitivity_bound(model: LossModel) -> Sensitivity:
    return model.sensitivity()
