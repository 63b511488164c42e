import numpy as np
import pytest

from privstream.errors import DomainError
from privstream.models import (HuberLinearModel, LogisticModel, Observation)
from privstream.privacy import NoiseSource, PrivacyBudget
from privstream.sgd import SgdState, StepSchedule, run_stream, step
from privstream.simulate import SimDesign, generate_stream

NONPRIVATE = PrivacyBudget.non_private()


def _state(model=None, gamma=0.5, alpha=0.51, dim=1, budget=NONPRIVATE,
           rng=None):
    return SgdState(model=model or HuberLinearModel(c=1000.0),
                    schedule=StepSchedule(gamma=gamma, alpha=alpha),
                    budget=budget, rng=rng, theta=np.zeros(dim))


def test_schedule_validation_and_values():
    with pytest.raises(DomainError):
        StepSchedule(gamma=0.0)
    with pytest.raises(DomainError):
        StepSchedule(alpha=0.5)
    with pytest.raises(DomainError):
        StepSchedule(alpha=1.0)
    s = StepSchedule(gamma=0.5, alpha=0.51)
    # independent scalar oracle: 0.5 * 100 ** -0.51
    assert s.gamma_at(100) == pytest.approx(0.0477496293, abs=1e-9)
    assert np.array_equal(s.gammas(3),
                          [s.gamma_at(1), s.gamma_at(2), s.gamma_at(3)])


def test_step_zero_residual_fixed_point():
    st = _state()
    step(st, Observation(np.array([1.0]), 0.0))
    assert np.array_equal(st.theta, [0.0])
    assert st.n == 1


def test_step_one_step_arithmetic():
    st = _state()
    step(st, Observation(np.array([1.0]), 1.0))
    # gamma_1 = 0.5, psi = -1, so theta moves to 0.5
    assert np.allclose(st.theta, [0.5], atol=1e-15)
    assert np.allclose(st.theta_bar, [0.5], atol=1e-15)


def test_step_noise_variance_matches_mechanism_scale():
    # logistic with x = 0 gives psi = 0 so the update is pure noise:
    # per-coordinate variance of (theta_n - theta_{n-1}) / gamma_n is
    # (2 b0 / mu)^2 = 8
    n = 100_000
    st = _state(model=LogisticModel(), dim=2,
                budget=PrivacyBudget(mu=1.0), rng=NoiseSource(15, 0))
    obs = Observation(np.zeros(2), 0.0)
    diffs = np.empty((n, 2))
    prev = st.theta.copy()
    for i in range(n):
        step(st, obs)
        diffs[i] = (st.theta - prev) / st.schedule.gamma_at(st.n)
        prev = st.theta.copy()
    assert np.all(np.abs(diffs.var(axis=0) / 8.0 - 1.0) <= 0.03)


def test_averaging_identity_against_stored_iterates():
    rng = np.random.default_rng(2)
    st = _state(model=HuberLinearModel(c=1.345), dim=3,
                budget=PrivacyBudget(mu=1.0), rng=NoiseSource(3, 0))
    iterates = []
    for _ in range(1000):
        x = rng.standard_normal(3)
        y = float(rng.standard_normal())
        step(st, Observation(x, y))
        iterates.append(st.theta.copy())
    direct = np.mean(iterates, axis=0)
    assert np.max(np.abs(st.theta_bar - direct)) <= 1e-12


def test_one_pass_touches_each_observation_once():
    seen = []

    def stream(n):
        for i in range(n):
            seen.append(i)
            yield Observation(np.array([1.0]), 0.0)

    final = run_stream(HuberLinearModel(), StepSchedule(), NONPRIVATE,
                       np.zeros(1), stream(57))
    assert final.n == 57
    assert seen == list(range(57))


def test_run_stream_determinism_and_single_step_base_case():
    obs = [Observation(np.array([1.0, 2.0]), 1.5)]
    a = run_stream(HuberLinearModel(), StepSchedule(), PrivacyBudget(1.0),
                   np.zeros(2), obs, rng=NoiseSource(4, 0))
    b = run_stream(HuberLinearModel(), StepSchedule(), PrivacyBudget(1.0),
                   np.zeros(2), obs, rng=NoiseSource(4, 0))
    assert np.array_equal(a.theta, b.theta)
    st = _state(model=HuberLinearModel(), dim=2,
                budget=PrivacyBudget(1.0), rng=NoiseSource(4, 0))
    step(st, obs[0])
    assert np.array_equal(a.theta, st.theta)


def test_noise_off_equivalence_with_classical_sgd():
    # infinite budget reproduces a hand-rolled averaged-SGD loop
    # bit-for-bit on the same data order
    rng = np.random.default_rng(5)
    model = HuberLinearModel(c=1.345)
    sched = StepSchedule()
    xs = rng.standard_normal((200, 3))
    ys = rng.standard_normal(200)
    final = run_stream(model, sched, NONPRIVATE, np.zeros(3),
                       [Observation(x, y) for x, y in zip(xs, ys)])
    theta = np.zeros(3)
    bar = np.zeros(3)
    for i in range(200):
        psi = model.psi(theta, xs[i], ys[i])
        theta = theta - sched.gamma_at(i + 1) * psi
        bar = bar + (theta - bar) / (i + 1)
    assert np.array_equal(final.theta, theta)
    assert np.array_equal(final.theta_bar, bar)


def test_empty_stream_rejected():
    with pytest.raises(DomainError):
        run_stream(HuberLinearModel(), StepSchedule(), NONPRIVATE,
                   np.zeros(2), [])
    with pytest.raises(DomainError):
        SgdState(model=HuberLinearModel(), schedule=StepSchedule(),
                 budget=NONPRIVATE, rng=None, theta=np.array([]))


def test_bad_observation_rejected_and_state_unchanged():
    st = _state(dim=2)
    step(st, Observation(np.array([1.0, 0.0]), 1.0))
    snapshot = (st.theta.copy(), st.theta_bar.copy(), st.n)
    with pytest.raises(DomainError, match="step 2"):
        step(st, Observation(np.array([np.nan, 0.0]), 1.0))
    with pytest.raises(DomainError):
        step(st, Observation(np.array([1.0]), 1.0))
    assert np.array_equal(st.theta, snapshot[0])
    assert np.array_equal(st.theta_bar, snapshot[1])
    assert st.n == snapshot[2]


def test_private_state_requires_rng():
    with pytest.raises(DomainError):
        _state(budget=PrivacyBudget(mu=1.0), rng=None)


def test_per_step_budgets_scale_the_noise():
    # reconstruct the two updates by replaying the noise stream
    budget = PrivacyBudget(mu=1.0, per_step=[1.0, 4.0])
    model = LogisticModel()
    st = _state(model=model, dim=2, budget=budget, rng=NoiseSource(77, 0))
    obs = Observation(np.zeros(2), 0.0)  # psi = 0, pure noise steps
    step(st, obs)
    step(st, obs)
    replay = NoiseSource(77, 0)
    xi1, xi2 = replay.standard_normal(2), replay.standard_normal(2)
    sched = st.schedule
    expect = -(sched.gamma_at(1) * (2 * model.b0 / 1.0) * xi1
               + sched.gamma_at(2) * (2 * model.b0 / 4.0) * xi2)
    assert np.allclose(st.theta, expect, atol=1e-15)


def test_run_stream_consistency_on_synthetic_linear_design():
    # non-private pass over the standard linear design recovers the truth
    design = SimDesign(family="huber_linear", p=3, n=100_000,
                       replications=1, seed=31)
    data = generate_stream(design, 0)
    final = run_stream(design.model(), design.schedule, NONPRIVATE,
                       np.zeros(design.dim), data)
    assert np.linalg.norm(final.theta_bar - design.truth()) <= 0.05
