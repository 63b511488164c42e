"""Monte Carlo harness: data generation, replication runs, CP/AL metrics.

Replications are mutually independent given the design seed: replication
``r`` owns four derived noise streams (covariates, responses, SGD noise,
release noise), so results do not depend on execution order or batching.

Two execution paths produce the same replication results: the sequential
reference (:func:`run_replication`, one observation at a time through
:func:`privstream.sgd.step`) and a lockstep engine (:func:`run_design`)
that advances all replications together on array rows, which is what
makes full-scale designs run in seconds.  Both consume identical noise
streams; they differ only in floating-point summation order.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .errors import DomainError, PrivstreamError
from .inference import (CriticalValueTable, PluginCovarianceState,
                        RandomScalingState, normal_quantile,
                        plugin_sandwich, plugin_update, privacy_inflation,
                        rs_update, rs_vhat)
from .models import FAMILIES, LossModel, Observation, make_model
from .privacy import (NoiseSource, PrivacyBudget, plugin_release_budget,
                      symmetric_normal_matrix)
from .sgd import SgdState, StepSchedule, step

logger = logging.getLogger(__name__)

SIGMA_STRUCTURES = ("identity", "ar")

# purpose indices of the per-replication derived streams
_COV, _RESP, _SGD, _RELEASE = 0, 1, 2, 3

_CHUNK = 2048


@dataclass(frozen=True)
class SimDesign:
    """One simulation configuration; every result is a pure function of it."""

    family: str = "huber_linear"
    p: int = 3
    n: int = 200_000
    mu: float = math.inf
    sigma_structure: str = "identity"
    noise_sd: float = 0.5
    replications: int = 200
    levels: Tuple[float, ...] = (0.95,)
    schedule: StepSchedule = field(default_factory=StepSchedule)
    seed: int = 0
    c: float = 1.345
    tau: float = 0.5
    theta0: Optional[Tuple[float, ...]] = None
    eval_ns: Tuple[int, ...] = ()
    snapshot_ns: Tuple[int, ...] = ()

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise DomainError(f"unknown family {self.family!r}")
        if self.sigma_structure not in SIGMA_STRUCTURES:
            raise DomainError(
                f"unknown covariance structure {self.sigma_structure!r}")
        if self.p < 1 or self.n < 1 or self.replications < 1:
            raise DomainError("p, n and replications must all be >= 1")
        if not (self.mu > 0):
            raise DomainError(f"mu must be positive, got {self.mu}")
        if not (self.noise_sd > 0):
            raise DomainError("noise_sd must be positive")
        if not self.levels or not all(0.0 < l < 1.0 for l in self.levels):
            raise DomainError("levels must lie in (0, 1)")
        object.__setattr__(self, "levels", tuple(float(l)
                                                 for l in self.levels))
        if self.theta0 is None:
            object.__setattr__(self, "theta0", tuple([1.0] * (self.p + 1)))
        else:
            object.__setattr__(self, "theta0",
                               tuple(float(t) for t in self.theta0))
        if len(self.theta0) != self.p + 1:
            raise DomainError(
                f"theta0 must have dimension p+1 = {self.p + 1}")
        evs = tuple(sorted(set(int(e) for e in self.eval_ns))) or (self.n,)
        if evs[0] < 1 or evs[-1] > self.n:
            raise DomainError("eval_ns must lie in [1, n]")
        object.__setattr__(self, "eval_ns", evs)
        snaps = tuple(sorted(set(int(s) for s in self.snapshot_ns)))
        if snaps and (snaps[0] < 1 or snaps[-1] > self.n):
            raise DomainError("snapshot_ns must lie in [1, n]")
        object.__setattr__(self, "snapshot_ns", snaps)

    @property
    def dim(self) -> int:
        return self.p + 1

    def model(self) -> LossModel:
        return make_model(self.family, c=self.c, tau=self.tau)

    def budget(self) -> PrivacyBudget:
        return PrivacyBudget(mu=self.mu)

    def truth(self) -> np.ndarray:
        return np.asarray(self.theta0, dtype=float)

    def covariate_chol(self) -> Optional[np.ndarray]:
        if self.sigma_structure == "identity":
            return None
        idx = np.arange(self.p)
        sigma = 0.5 ** np.abs(idx[:, None] - idx[None, :])
        return np.linalg.cholesky(sigma)

    def quantile_levels(self) -> Tuple[float, ...]:
        """Pivot quantiles the critical-value table must supply."""
        return tuple(sorted(1.0 - (1.0 - l) / 2.0 for l in self.levels))


def replication_streams(design: SimDesign, index: int):
    """The four independent noise streams owned by one replication."""
    base = NoiseSource(design.seed, index)
    return (base.child(_COV), base.child(_RESP),
            base.child(_SGD), base.child(_RELEASE))


def _draw_covariates(design: SimDesign, rng: NoiseSource, count: int,
                     chol: Optional[np.ndarray]) -> np.ndarray:
    z = rng.standard_normal((count, design.p))
    if chol is not None:
        z = z @ chol.T
    x = np.empty((count, design.dim))
    x[:, 0] = 1.0
    x[:, 1:] = z
    return x


def _draw_responses(design: SimDesign, rng: NoiseSource,
                    x: np.ndarray) -> np.ndarray:
    mean = x @ design.truth()
    if design.family == "logistic":
        prob = 1.0 / (1.0 + np.exp(-mean))
        return (rng.uniform(len(x)) < prob).astype(float)
    return mean + design.noise_sd * rng.standard_normal(len(x))


class ObservationStream:
    """In-memory observation sequence backed by arrays."""

    def __init__(self, x: np.ndarray, y: np.ndarray):
        self.x = x
        self.y = y

    def __len__(self):
        return len(self.y)

    def __iter__(self):
        for i in range(len(self.y)):
            yield Observation(self.x[i], self.y[i])


def generate_stream(design: SimDesign, replication_index: int
                    ) -> ObservationStream:
    """Full data stream for one replication, deterministic in the seed."""
    cov_rng, resp_rng, _, _ = replication_streams(design, replication_index)
    x = _draw_covariates(design, cov_rng, design.n, design.covariate_chol())
    y = _draw_responses(design, resp_rng, x)
    return ObservationStream(x, y)


@dataclass
class FitResult:
    """Point estimates and intervals for one fitted stream.

    ``intervals`` maps estimator kind (``"plugin"`` / ``"rs"``) to an
    array of shape ``(n_evals, n_levels, dim, 2)`` holding lower/upper
    bounds.  ``theta_snapshots`` records last iterates at
    ``snapshot_ns`` for trajectory diagnostics.
    """

    eval_ns: Tuple[int, ...]
    levels: Tuple[float, ...]
    theta_bar: np.ndarray
    intervals: Dict[str, np.ndarray]
    sigma_diag: np.ndarray
    vhat_diag: np.ndarray
    snapshot_ns: Tuple[int, ...] = ()
    theta_snapshots: Optional[np.ndarray] = None
    release_budget: Optional[float] = None


def _interval_arrays(theta_bar, sigma_diag, vhat_diag, n, levels, table):
    """Bounds for both estimator kinds at one evaluation point."""
    d = theta_bar.size
    out_plugin = np.empty((len(levels), d, 2))
    out_rs = np.empty((len(levels), d, 2))
    sqrt_n = math.sqrt(n)
    for li, level in enumerate(levels):
        zp = normal_quantile(1.0 - (1.0 - level) / 2.0)
        zr = table.value(1.0 - (1.0 - level) / 2.0)
        half_p = zp * np.sqrt(np.maximum(sigma_diag, 0.0)) / sqrt_n
        half_r = zr * np.sqrt(np.maximum(vhat_diag, 0.0)) / sqrt_n
        out_plugin[li, :, 0] = theta_bar - half_p
        out_plugin[li, :, 1] = theta_bar + half_p
        out_rs[li, :, 0] = theta_bar - half_r
        out_rs[li, :, 1] = theta_bar + half_r
    return out_plugin, out_rs


def fit_stream(model: LossModel, schedule: StepSchedule,
               budget: PrivacyBudget, x: np.ndarray, y: np.ndarray,
               eval_ns: Sequence[int], levels: Sequence[float],
               table: CriticalValueTable, sgd_rng: Optional[NoiseSource],
               release_rng: Optional[NoiseSource],
               snapshot_ns: Sequence[int] = (),
               kappa1: float = 1e-3, kappa2: float = 1e-3) -> FitResult:
    """Sequential reference fit: one pass, inference states maintained
    online, plug-in released freshly at each evaluation point."""
    n_total = len(y)
    eval_set = sorted(set(int(e) for e in eval_ns))
    snap_set = sorted(set(int(s) for s in snapshot_ns))
    if not eval_set or eval_set[0] < 1 or eval_set[-1] > n_total:
        raise DomainError("evaluation points must lie within the stream")
    d = x.shape[1]
    state = SgdState(model=model, schedule=schedule, budget=budget,
                     rng=sgd_rng, theta=np.zeros(d))
    rs_state = RandomScalingState(d)
    plug_state = PluginCovarianceState(d, kappa1=kappa1, kappa2=kappa2)

    theta_bar = np.empty((len(eval_set), d))
    sigma_diag = np.empty((len(eval_set), d))
    vhat_diag = np.empty((len(eval_set), d))
    plugin_iv = np.empty((len(eval_set), len(levels), d, 2))
    rs_iv = np.empty((len(eval_set), len(levels), d, 2))
    snapshots = np.empty((len(snap_set), d))

    ei = 0
    si = 0
    for i in range(n_total):
        obs = Observation(x[i], y[i])
        grad = model.psi(state.theta, obs.x, obs.y)
        hfac = model.hessian_factor(state.theta, obs.x, obs.y)
        step(state, obs, gradient=grad)
        plugin_update(plug_state, grad, hfac)
        rs_update(rs_state, state.theta_bar, state.n)
        nstep = state.n
        if si < len(snap_set) and nstep == snap_set[si]:
            snapshots[si] = state.theta
            si += 1
        if ei < len(eval_set) and nstep == eval_set[ei]:
            sigma = plugin_sandwich(plug_state, model, budget, release_rng)
            vhat = rs_vhat(rs_state, state.theta_bar)
            theta_bar[ei] = state.theta_bar
            sigma_diag[ei] = np.diag(sigma)
            vhat_diag[ei] = np.diag(vhat)
            plugin_iv[ei], rs_iv[ei] = _interval_arrays(
                state.theta_bar, sigma_diag[ei], vhat_diag[ei], nstep,
                levels, table)
            ei += 1

    release = (plugin_release_budget(budget.iterate_budget())
               if budget.is_private else None)
    return FitResult(eval_ns=tuple(eval_set), levels=tuple(levels),
                     theta_bar=theta_bar,
                     intervals={"plugin": plugin_iv, "rs": rs_iv},
                     sigma_diag=sigma_diag, vhat_diag=vhat_diag,
                     snapshot_ns=tuple(snap_set),
                     theta_snapshots=snapshots, release_budget=release)


def run_replication(design: SimDesign, replication_index: int,
                    table: CriticalValueTable) -> FitResult:
    """One stream, one SGD pass, all inference methods at the design's
    evaluation points.  Deterministic in ``(design.seed, index)``."""
    data = generate_stream(design, replication_index)
    _, _, sgd_rng, release_rng = replication_streams(design,
                                                     replication_index)
    try:
        return fit_stream(design.model(), design.schedule, design.budget(),
                          data.x, data.y, design.eval_ns, design.levels,
                          table, sgd_rng, release_rng,
                          snapshot_ns=design.snapshot_ns)
    except PrivstreamError as exc:
        raise type(exc)(
            f"replication {replication_index}: {exc}") from exc


def _plugin_release_batch(hess_sum, gram_sum, n, model, budget, release_rngs,
                          kappa1=1e-3, kappa2=1e-3):
    """Vectorized plug-in release for all replications at one step count."""
    reps, d, _ = hess_sum.shape
    a_hat = hess_sum / n
    s_hat = gram_sum / n
    if budget.is_private:
        mu = budget.iterate_budget()
        s_hat = s_hat + privacy_inflation(model, budget) * np.eye(d)
        noise_a = np.empty((reps, d, d))
        noise_s = np.empty((reps, d, d))
        for r in range(reps):
            noise_a[r] = symmetric_normal_matrix(d, release_rngs[r])
            noise_s[r] = symmetric_normal_matrix(d, release_rngs[r])
        a_hat = a_hat + (2.0 * model.b1 / (n * mu)) * noise_a
        s_hat = s_hat + (2.0 * model.b0 ** 2 / (n * mu)) * noise_s
    a_vals, a_vecs = np.linalg.eigh(a_hat)
    s_vals, s_vecs = np.linalg.eigh(s_hat)
    a_vals = np.maximum(a_vals, kappa1)
    s_vals = np.maximum(s_vals, kappa2)
    a_inv = (a_vecs / a_vals[:, None, :]) @ a_vecs.transpose(0, 2, 1)
    s_star = (s_vecs * s_vals[:, None, :]) @ s_vecs.transpose(0, 2, 1)
    return a_inv @ s_star @ a_inv


def run_design(design: SimDesign, table: CriticalValueTable
               ) -> List[FitResult]:
    """All replications advanced in lockstep (rows = replications).

    Equivalent to mapping :func:`run_replication` over indices, up to
    floating-point summation order in the covariance accumulators.
    """
    model = design.model()
    budget = design.budget()
    reps, n, d = design.replications, design.n, design.dim
    private = budget.is_private
    noise_coef = (2.0 * model.b0 / budget.iterate_budget()) if private \
        else 0.0
    chol = design.covariate_chol()
    gammas = design.schedule.gammas(n)

    streams = [replication_streams(design, r) for r in range(reps)]
    cov_rngs = [s[_COV] for s in streams]
    resp_rngs = [s[_RESP] for s in streams]
    sgd_rngs = [s[_SGD] for s in streams]
    release_rngs = [s[_RELEASE] for s in streams]

    eval_set = list(design.eval_ns)
    snap_set = list(design.snapshot_ns)
    bounds = sorted(set(range(_CHUNK, n, _CHUNK)) | set(eval_set)
                    | set(snap_set) | {n})

    theta = np.zeros((reps, d))
    theta_bar = np.zeros((reps, d))
    rs_u = np.zeros((reps, d, d))
    rs_v = np.zeros((reps, d))
    sum_b2 = 0.0
    hess_sum = np.zeros((reps, d, d))
    gram_sum = np.zeros((reps, d, d))

    theta_bar_out = np.empty((reps, len(eval_set), d))
    sigma_out = np.empty((reps, len(eval_set), d))
    vhat_out = np.empty((reps, len(eval_set), d))
    plug_iv = np.empty((reps, len(eval_set), len(design.levels), d, 2))
    rs_iv = np.empty((reps, len(eval_set), len(design.levels), d, 2))
    snaps_out = np.empty((reps, len(snap_set), d))

    max_ck = max(b - a for a, b in zip([0] + bounds[:-1], bounds))
    xbuf = np.empty((max_ck, reps, d))
    ybuf = np.empty((max_ck, reps))
    xibuf = np.empty((max_ck, reps, d)) if private else None
    psibuf = np.empty((max_ck, reps, d))
    mbuf = np.empty((max_ck, reps, d))
    tbbuf = np.empty((max_ck, reps, d))

    t0 = 0
    for t1 in bounds:
        ck = t1 - t0
        for r in range(reps):
            xr = _draw_covariates(design, cov_rngs[r], ck, chol)
            xbuf[:ck, r, :] = xr
            ybuf[:ck, r] = _draw_responses(design, resp_rngs[r], xr)
            if private:
                xibuf[:ck, r, :] = sgd_rngs[r].standard_normal((ck, d))
        for i in range(ck):
            nstep = t0 + i + 1
            x_i = xbuf[i]
            psi = model.psi_batch(theta, x_i, ybuf[i])
            psibuf[i] = psi
            mbuf[i] = model.hessian_factor_batch(theta, x_i, ybuf[i])
            g = psi + noise_coef * xibuf[i] if private else psi
            theta -= gammas[nstep - 1] * g
            theta_bar += (theta - theta_bar) / nstep
            tbbuf[i] = theta_bar
        ns2 = np.arange(t0 + 1, t1 + 1, dtype=float) ** 2
        rs_u += np.einsum("c,crd,cre->rde", ns2, tbbuf[:ck], tbbuf[:ck],
                          optimize=True)
        rs_v += np.einsum("c,crd->rd", ns2, tbbuf[:ck])
        sum_b2 += ns2.sum()
        gram_sum += np.einsum("crd,cre->rde", psibuf[:ck], psibuf[:ck],
                              optimize=True)
        hess_sum += np.einsum("crd,cre->rde", mbuf[:ck], mbuf[:ck],
                              optimize=True)
        t0 = t1

        if t1 in snap_set:
            snaps_out[:, snap_set.index(t1), :] = theta
        if t1 in eval_set:
            ei = eval_set.index(t1)
            nn = float(t1)
            sigma = _plugin_release_batch(hess_sum, gram_sum, t1, model,
                                          budget, release_rngs)
            cross = theta_bar[:, :, None] * rs_v[:, None, :]
            vhat = (rs_u - cross - cross.transpose(0, 2, 1)
                    + sum_b2 * theta_bar[:, :, None]
                    * theta_bar[:, None, :]) / nn ** 2
            theta_bar_out[:, ei] = theta_bar
            sigma_out[:, ei] = np.einsum("rdd->rd", sigma)
            vhat_out[:, ei] = np.einsum("rdd->rd", vhat)
            for r in range(reps):
                plug_iv[r, ei], rs_iv[r, ei] = _interval_arrays(
                    theta_bar[r], sigma_out[r, ei], vhat_out[r, ei], t1,
                    design.levels, table)
            logger.info("design seed=%s mu=%s: evaluated n=%d",
                        design.seed, design.mu, t1)

    release = (plugin_release_budget(budget.iterate_budget())
               if private else None)
    results = []
    for r in range(reps):
        results.append(FitResult(
            eval_ns=tuple(eval_set), levels=design.levels,
            theta_bar=theta_bar_out[r].copy(),
            intervals={"plugin": plug_iv[r].copy(), "rs": rs_iv[r].copy()},
            sigma_diag=sigma_out[r].copy(), vhat_diag=vhat_out[r].copy(),
            snapshot_ns=tuple(snap_set),
            theta_snapshots=snaps_out[r].copy(),
            release_budget=release))
    return results


# ---------------------------------------------------------------------------
# aggregation


def method_label(kind: str, private: bool) -> str:
    if kind == "plugin":
        return "PPI" if private else "PI"
    if kind == "rs":
        return "PRS" if private else "RS"
    raise DomainError(f"unknown estimator kind {kind!r}")


@dataclass(frozen=True)
class SummaryRow:
    method: str
    n: int
    level: float
    cp: float
    al: float
    cp_se: float
    al_se: float
    cp_by_coef: Tuple[float, ...]
    al_by_coef: Tuple[float, ...]


@dataclass
class SimulationReport:
    """Aggregated CP/AL metrics plus replication-level detail."""

    design: SimDesign
    methods: Dict[str, str]
    summary: List[SummaryRow]
    theta_bar: np.ndarray                 # (reps, evals, dim)
    intervals: Dict[str, np.ndarray]      # kind -> (reps, evals, L, dim, 2)
    release_budget: Optional[float]

    def row(self, method: str, n: int, level: float = 0.95) -> SummaryRow:
        for r in self.summary:
            if (r.method == method and r.n == n
                    and abs(r.level - level) < 1e-12):
                return r
        raise KeyError(f"no summary row for ({method}, {n}, {level})")


def _block_se(values: np.ndarray, blocks: int = 4) -> float:
    """Std of block means across replications (the bracketed errors)."""
    reps = values.shape[0]
    blocks = min(blocks, reps)
    splits = np.array_split(np.arange(reps), blocks)
    means = np.array([values[idx].mean() for idx in splits])
    return float(means.std(ddof=1)) if blocks > 1 else 0.0


def aggregate(results: Sequence[FitResult],
              design: SimDesign) -> SimulationReport:
    """CP/AL averaged over the non-intercept coefficients.

    Headline metrics average over ``j = 1..p``, excluding the intercept; the per-coefficient breakdown keeps all
    ``p + 1`` coordinates.
    """
    if not results:
        raise DomainError("need at least one replication result")
    truth = design.truth()
    private = design.budget().is_private
    eval_ns = results[0].eval_ns
    levels = results[0].levels
    reps = len(results)

    theta_bar = np.stack([f.theta_bar for f in results])
    intervals = {k: np.stack([f.intervals[k] for f in results])
                 for k in results[0].intervals}
    methods = {k: method_label(k, private) for k in intervals}

    summary = []
    for kind, bounds in intervals.items():
        label = methods[kind]
        for ei, nn in enumerate(eval_ns):
            for li, level in enumerate(levels):
                lo = bounds[:, ei, li, :, 0]
                hi = bounds[:, ei, li, :, 1]
                covered = (lo <= truth) & (truth <= hi)
                length = hi - lo
                cov_slope = covered[:, 1:]
                len_slope = length[:, 1:]
                summary.append(SummaryRow(
                    method=label, n=int(nn), level=float(level),
                    cp=float(cov_slope.mean()),
                    al=float(len_slope.mean()),
                    cp_se=_block_se(cov_slope.mean(axis=1)),
                    al_se=_block_se(len_slope.mean(axis=1)),
                    cp_by_coef=tuple(covered.mean(axis=0)),
                    al_by_coef=tuple(length.mean(axis=0))))

    return SimulationReport(design=design, methods=methods, summary=summary,
                            theta_bar=theta_bar, intervals=intervals,
                            release_budget=results[0].release_budget)


def simulate_design(design: SimDesign, table: CriticalValueTable
                    ) -> SimulationReport:
    """Run every replication through the lockstep engine and aggregate."""
    return aggregate(run_design(design, table), design)
