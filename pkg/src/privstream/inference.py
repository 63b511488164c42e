"""Online confidence intervals for averaged SGD iterates.

Two constructions:

* plug-in sandwich: accumulate the Hessian factors and gradient Gram
  matrix along the path, privatize both on release with the matrix
  Gaussian mechanism, floor eigenvalues, and invert the sandwich;
* random scaling: studentize with a matrix built from partial sums of
  the iterate path, whose pivot law is parameter-free and whose
  critical values come from Brownian-motion Monte Carlo.

Random scaling reads only the released iterates, so it adds no privacy
cost beyond theirs (post-processing).  One plug-in release of the triple
(average, Hessian estimate, Gram estimate) costs ``sqrt(3) * mu``.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from enum import Enum
from statistics import NormalDist
from typing import Optional, Sequence, Tuple

import numpy as np

from .errors import DomainError, ParseError, SequencingError, StateError
from .models import LossModel
from .privacy import NoiseSource, PrivacyBudget, matrix_gaussian_mechanism


class Method(Enum):
    PLUGIN_PRIVATE = "plugin_private"
    PLUGIN_NONPRIVATE = "plugin_nonprivate"
    RANDOM_SCALING = "random_scaling"


@dataclass(frozen=True)
class ConfidenceInterval:
    lower: float
    upper: float
    level: float
    method: Method

    def __post_init__(self):
        if not (0.0 < self.level < 1.0):
            raise DomainError(f"level must lie in (0, 1), got {self.level}")
        if self.lower > self.upper:
            raise DomainError("interval bounds are reversed")

    @property
    def length(self) -> float:
        return self.upper - self.lower

    def covers(self, value: float) -> bool:
        return self.lower <= value <= self.upper


def normal_quantile(q: float) -> float:
    return NormalDist().inv_cdf(q)


# ---------------------------------------------------------------------------
# random scaling


class RandomScalingState:
    """Recursive accumulators for the studentizing matrix.

    Maintains ``U_n = sum_b (b^2) bar_b bar_b^T``, ``v_n = sum_b (b^2)
    bar_b`` and ``sum_b2 = sum_b b^2`` where ``bar_b`` is the running
    average after ``b`` steps.  Each update costs O(p^2).
    """

    def __init__(self, dim: int):
        if dim < 1:
            raise DomainError("dimension must be >= 1")
        self.dim = dim
        self.U = np.zeros((dim, dim))
        self.v = np.zeros(dim)
        self.sum_b2 = 0.0
        self.n = 0


def rs_update(state: RandomScalingState, theta_bar_n: np.ndarray,
              n: int) -> RandomScalingState:
    """Fold the running average after step ``n`` into the accumulators."""
    if n != state.n + 1:
        raise SequencingError(
            f"random-scaling update for step {n} applied at state {state.n}")
    tb = np.asarray(theta_bar_n, dtype=float)
    if tb.shape != (state.dim,):
        raise DomainError(
            f"average has dimension {tb.shape}, expected ({state.dim},)")
    n2 = float(n) * float(n)
    state.U += n2 * np.outer(tb, tb)
    state.v += n2 * tb
    state.sum_b2 += n2
    state.n = n
    return state


def rs_vhat(state: RandomScalingState, theta_bar: np.ndarray) -> np.ndarray:
    """Closed-form studentizing matrix

    ``V_n = (U_n - bar v^T - v bar^T + (sum_b b^2) bar bar^T) / n^2``.
    """
    if state.n == 0:
        raise StateError("random-scaling state is empty")
    tb = np.asarray(theta_bar, dtype=float)
    cross = np.outer(tb, state.v)
    v = (state.U - cross - cross.T + state.sum_b2 * np.outer(tb, tb))
    return v / (float(state.n) ** 2)


@dataclass(frozen=True)
class CriticalValueTable:
    """Monte Carlo quantiles of the random-scaling pivot.

    Serializes to a two-column plain-text table; the header records the
    sampling parameters so cached files are only reused on exact match.
    """

    levels: Tuple[float, ...]
    values: Tuple[float, ...]
    paths: int
    grid: int
    seed: int

    def __post_init__(self):
        lv = np.asarray(self.levels)
        if lv.size == 0 or np.any(np.diff(lv) <= 0):
            raise DomainError("levels must be strictly increasing")
        if np.any(np.diff(np.asarray(self.values)) < 0):
            raise DomainError("critical values must be monotone in level")

    def value(self, level: float) -> float:
        lv = np.asarray(self.levels)
        idx = np.nonzero(np.abs(lv - level) < 1e-12)[0]
        if idx.size:
            return float(self.values[idx[0]])
        if not (lv[0] <= level <= lv[-1]):
            raise DomainError(
                f"quantile level {level} outside tabulated range "
                f"[{lv[0]}, {lv[-1]}]")
        return float(np.interp(level, lv, np.asarray(self.values)))

    def save(self, path) -> None:
        lines = [f"# paths={self.paths} grid={self.grid} seed={self.seed}\n",
                 "# level value\n"]
        lines += [f"{lvl!r} {val!r}\n"
                  for lvl, val in zip(self.levels, self.values)]
        with open(path, "w", encoding="utf-8") as fh:
            fh.writelines(lines)

    @classmethod
    def load(cls, path) -> "CriticalValueTable":
        meta = {}
        levels, values = [], []
        with open(path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, start=1):
                line = line.strip()
                if not line:
                    continue
                if line.startswith("#"):
                    for tok in line[1:].split():
                        if "=" in tok:
                            k, v = tok.split("=", 1)
                            meta[k] = v
                    continue
                parts = line.split()
                if len(parts) != 2:
                    raise ParseError("expected 'level value'", row=lineno)
                try:
                    levels.append(float(parts[0]))
                    values.append(float(parts[1]))
                except ValueError as exc:
                    raise ParseError(str(exc), row=lineno) from exc
        try:
            return cls(levels=tuple(levels), values=tuple(values),
                       paths=int(meta.get("paths", 0)),
                       grid=int(meta.get("grid", 0)),
                       seed=int(meta.get("seed", 0)))
        except DomainError as exc:
            raise ParseError(f"invalid cached table: {exc}") from exc

    def matches(self, levels, paths, grid, seed) -> bool:
        if (self.paths, self.grid, self.seed) != (paths, grid, seed):
            return False
        want = np.asarray(sorted(levels), dtype=float)
        have = np.asarray(self.levels, dtype=float)
        return want.size == have.size and bool(np.allclose(want, have,
                                                           atol=1e-12))


_BATCH_PATHS = 20_000


def _pivot_batch(seed: int, stream: int, batch_index: int, n_paths: int,
                 grid: int) -> np.ndarray:
    rng = NoiseSource(seed, stream).child(batch_index)
    z = rng.standard_normal((n_paths, grid)) * math.sqrt(1.0 / grid)
    w = np.cumsum(z, axis=1)
    w1 = w[:, -1]
    # left-endpoint Riemann sum over r in {0, 1/G, ..., (G-1)/G};
    # the r=0 term vanishes since W(0)=0
    t = np.arange(1, grid, dtype=float) / grid
    bridge = w[:, :-1] - t[None, :] * w1[:, None]
    integral = np.einsum("ng,ng->n", bridge, bridge) / grid
    return w1 / np.sqrt(integral)


def critical_values(levels: Sequence[float], paths: int = 1_000_000,
                    grid: int = 1_000, rng: Optional[NoiseSource] = None,
                    workers: int = 1) -> CriticalValueTable:
    """Simulate the pivot ``W(1) / sqrt(int_0^1 (W(r) - r W(1))^2 dr)``
    on discretized Brownian paths and return empirical quantiles.

    The result is a deterministic function of ``(levels, paths, grid,
    rng)``; ``workers`` only changes how batches are scheduled.
    """
    if paths < 10_000:
        raise DomainError(f"need at least 1e4 paths, got {paths}")
    if grid < 1_000:
        raise DomainError(f"need a grid of at least 1e3 points, got {grid}")
    levels = tuple(sorted(float(l) for l in levels))
    if not levels or not all(0.0 < l < 1.0 for l in levels):
        raise DomainError("quantile levels must lie in (0, 1)")
    if rng is None:
        rng = NoiseSource(0, 0)

    sizes = []
    remaining = paths
    while remaining > 0:
        sizes.append(min(_BATCH_PATHS, remaining))
        remaining -= sizes[-1]
    args = [(rng.seed, rng.stream, k, b, grid) for k, b in enumerate(sizes)]

    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            chunks = list(pool.map(_pivot_batch_star, args, chunksize=1))
    else:
        chunks = [_pivot_batch(*a) for a in args]
    pivots = np.concatenate(chunks)
    values = np.quantile(pivots, levels)
    return CriticalValueTable(levels=levels, values=tuple(float(v)
                                                          for v in values),
                              paths=paths, grid=grid, seed=rng.seed)


def _pivot_batch_star(args):
    return _pivot_batch(*args)


def rs_interval(theta_bar_j: float, vhat_jj: float, n: int, level: float,
                table: CriticalValueTable) -> ConfidenceInterval:
    """Random-scaling interval ``bar +- z^R * sqrt(V_jj) / sqrt(n)``."""
    if not (0.0 < level < 1.0):
        raise DomainError(f"level must lie in (0, 1), got {level}")
    if not (vhat_jj >= 0):
        raise DomainError(f"V_jj must be >= 0, got {vhat_jj}")
    z = table.value(1.0 - (1.0 - level) / 2.0)
    half = z * math.sqrt(vhat_jj) / math.sqrt(n)
    return ConfidenceInterval(theta_bar_j - half, theta_bar_j + half,
                              level, Method.RANDOM_SCALING)


# ---------------------------------------------------------------------------
# private plug-in sandwich


class PluginCovarianceState:
    """Running Hessian-factor and gradient-Gram sums along the path.

    Both summands are evaluated at the pre-update iterate, so the sums
    can be maintained online next to the SGD recursion.
    """

    def __init__(self, dim: int, kappa1: float = 1e-3, kappa2: float = 1e-3):
        if dim < 1:
            raise DomainError("dimension must be >= 1")
        if not (kappa1 > 0 and kappa2 > 0):
            raise DomainError("eigenvalue floors must be positive")
        self.dim = dim
        self.kappa1 = float(kappa1)
        self.kappa2 = float(kappa2)
        self.hessian_sum = np.zeros((dim, dim))
        self.gram_sum = np.zeros((dim, dim))
        self.n = 0


def plugin_update(state: PluginCovarianceState, grad: np.ndarray,
                  hess_factor: np.ndarray) -> PluginCovarianceState:
    """Fold one gradient and Hessian factor into the accumulators."""
    g = np.asarray(grad, dtype=float)
    m = np.asarray(hess_factor, dtype=float)
    if g.shape != (state.dim,) or m.shape != (state.dim,):
        raise DomainError(
            f"expected vectors of dimension {state.dim}, got "
            f"{g.shape} and {m.shape}")
    state.gram_sum += np.outer(g, g)
    state.hessian_sum += np.outer(m, m)
    state.n += 1
    return state


def privacy_inflation(model: LossModel, budget: PrivacyBudget) -> float:
    """Additive variance ``4 b0^2 / mu^2`` induced by the iterate noise;
    zero under an infinite budget."""
    if not budget.is_private:
        return 0.0
    mu = budget.iterate_budget()
    return 4.0 * model.b0 ** 2 / mu ** 2


def plugin_components(state: PluginCovarianceState, model: LossModel,
                      budget: PrivacyBudget,
                      rng: Optional[NoiseSource] = None):
    """Privatized Hessian and Gram estimates before eigenvalue flooring.

    Passing ``rng=None`` with a private budget forces the matrix noise
    to zero (the deterministic inflation term is kept); this is how the
    cost-of-privacy identity is exposed for verification.
    """
    if state.n == 0:
        raise StateError("plug-in state holds no observations")
    n = state.n
    a_hat = state.hessian_sum / n
    s_hat = state.gram_sum / n
    if budget.is_private:
        mu = budget.iterate_budget()
        s_hat = s_hat + privacy_inflation(model, budget) * np.eye(state.dim)
        if rng is not None:
            a_hat = matrix_gaussian_mechanism(
                a_hat, 2.0 * model.b1 / (n * mu), rng)
            s_hat = matrix_gaussian_mechanism(
                s_hat, 2.0 * model.b0 ** 2 / (n * mu), rng)
    return a_hat, s_hat


def _floor_spectrum(matrix: np.ndarray, floor: float):
    vals, vecs = np.linalg.eigh(matrix)
    return np.maximum(vals, floor), vecs


def plugin_sandwich(state: PluginCovarianceState, model: LossModel,
                    budget: PrivacyBudget,
                    rng: Optional[NoiseSource] = None) -> np.ndarray:
    """Sandwich covariance estimate ``A*^-1 S* A*^-1``.

    ``A*`` and ``S*`` are the privatized component matrices with
    eigenvalues floored at ``kappa1`` and ``kappa2``.  Under an infinite
    budget no noise or inflation enters and the non-private plug-in
    estimator comes out.  Each call with a private budget consumes one
    fresh pair of noise matrices (one release).
    """
    a_hat, s_hat = plugin_components(state, model, budget, rng)
    a_vals, a_vecs = _floor_spectrum(a_hat, state.kappa1)
    s_vals, s_vecs = _floor_spectrum(s_hat, state.kappa2)
    a_star_inv = (a_vecs / a_vals) @ a_vecs.T
    s_star = (s_vecs * s_vals) @ s_vecs.T
    return a_star_inv @ s_star @ a_star_inv


def plugin_interval(theta_bar_j: float, sigma_hat_jj: float, n: int,
                    level: float,
                    private: bool = True) -> ConfidenceInterval:
    """Normal-quantile interval ``bar +- z * sqrt(Sigma_jj) / sqrt(n)``."""
    if not (0.0 < level < 1.0):
        raise DomainError(f"level must lie in (0, 1), got {level}")
    if not (sigma_hat_jj >= 0):
        raise DomainError(f"Sigma_jj must be >= 0, got {sigma_hat_jj}")
    z = normal_quantile(1.0 - (1.0 - level) / 2.0)
    half = z * math.sqrt(sigma_hat_jj) / math.sqrt(n)
    method = Method.PLUGIN_PRIVATE if private else Method.PLUGIN_NONPRIVATE
    return ConfidenceInterval(theta_bar_j - half, theta_bar_j + half,
                              level, method)
