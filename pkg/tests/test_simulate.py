import math

import numpy as np
import pytest

from privstream.errors import DomainError
from privstream.inference import plugin_sandwich, PluginCovarianceState
from privstream.models import HuberLinearModel
from privstream.privacy import NoiseSource, PrivacyBudget
from privstream.simulate import (FitResult, SimDesign, aggregate,
                                 generate_stream, method_label,
                                 run_design, run_replication,
                                 simulate_design)


def test_design_validation():
    with pytest.raises(DomainError):
        SimDesign(family="nope")
    with pytest.raises(DomainError):
        SimDesign(p=0)
    with pytest.raises(DomainError):
        SimDesign(mu=-1.0)
    with pytest.raises(DomainError):
        SimDesign(levels=(1.2,))
    with pytest.raises(DomainError):
        SimDesign(theta0=(1.0, 1.0))  # wrong dimension for p=3
    with pytest.raises(DomainError):
        SimDesign(n=100, eval_ns=(200,))
    d = SimDesign(p=2, n=50)
    assert d.theta0 == (1.0, 1.0, 1.0)
    assert d.eval_ns == (50,)


def test_ar_covariance_structure():
    d = SimDesign(p=4, sigma_structure="ar", n=10)
    chol = d.covariate_chol()
    sigma = chol @ chol.T
    assert sigma[0, 2] == pytest.approx(0.25, abs=1e-12)
    assert sigma[1, 2] == pytest.approx(0.5, abs=1e-12)
    assert np.allclose(np.diag(sigma), 1.0)


def test_identity_structure_uncorrelated_covariates():
    d = SimDesign(p=3, n=100_000, replications=1, seed=100)
    data = generate_stream(d, 0)
    s = data.x[:, 1:]
    corr = np.corrcoef(s.T)
    off = corr[~np.eye(3, dtype=bool)]
    assert np.max(np.abs(off)) <= 0.02


def test_linear_responses_are_centered():
    d = SimDesign(p=3, n=100_000, replications=1, seed=101)
    data = generate_stream(d, 0)
    resid = data.y - data.x @ d.truth()
    assert abs(resid.mean()) <= 4 * 0.5 / math.sqrt(len(data))


def test_logistic_responses_are_labels():
    d = SimDesign(family="logistic", p=2, n=5000, replications=1, seed=7)
    data = generate_stream(d, 0)
    assert set(np.unique(data.y)) <= {0.0, 1.0}


def test_generate_stream_deterministic_and_iterable():
    d = SimDesign(p=2, n=100, replications=2, seed=9)
    a = generate_stream(d, 1)
    b = generate_stream(d, 1)
    assert np.array_equal(a.x, b.x) and np.array_equal(a.y, b.y)
    c = generate_stream(d, 0)
    assert not np.array_equal(a.x, c.x)
    obs = list(a)
    assert len(obs) == 100 and np.array_equal(obs[3].x, a.x[3])


def test_run_replication_deterministic(small_table):
    d = SimDesign(p=2, n=400, mu=1.0, replications=3, seed=12,
                  eval_ns=(200, 400))
    a = run_replication(d, 1, small_table)
    b = run_replication(d, 1, small_table)
    assert np.array_equal(a.theta_bar, b.theta_bar)
    for kind in a.intervals:
        assert np.array_equal(a.intervals[kind], b.intervals[kind])
    assert a.release_budget == pytest.approx(math.sqrt(3.0))


def test_engine_matches_sequential_reference(small_table):
    d = SimDesign(p=2, n=1500, mu=1.0, replications=4, seed=5,
                  eval_ns=(700, 1500), snapshot_ns=(100, 1000))
    engine = run_design(d, small_table)
    for r in range(d.replications):
        ref = run_replication(d, r, small_table)
        assert np.allclose(ref.theta_bar, engine[r].theta_bar,
                           rtol=1e-10, atol=1e-12)
        assert np.allclose(ref.theta_snapshots, engine[r].theta_snapshots,
                           rtol=1e-10, atol=1e-12)
        assert np.allclose(ref.sigma_diag, engine[r].sigma_diag,
                           rtol=1e-8, atol=1e-10)
        assert np.allclose(ref.vhat_diag, engine[r].vhat_diag,
                           rtol=1e-8, atol=1e-10)
        for kind in ref.intervals:
            assert np.allclose(ref.intervals[kind], engine[r].intervals[kind],
                               rtol=1e-8, atol=1e-10)


def test_engine_nonprivate_matches_sequential(small_table):
    d = SimDesign(p=2, n=1000, replications=3, seed=6, eval_ns=(1000,))
    engine = run_design(d, small_table)
    ref = run_replication(d, 2, small_table)
    assert np.allclose(ref.theta_bar, engine[2].theta_bar, rtol=1e-10,
                       atol=1e-14)
    assert engine[2].release_budget is None


def test_noise_off_collapse_plugin_equals_nonprivate():
    # with an infinite budget the "private" release path consumes no
    # randomness and returns the plain plug-in estimate
    rng = np.random.default_rng(2)
    model = HuberLinearModel()
    st = PluginCovarianceState(3)
    for _ in range(40):
        theta = rng.standard_normal(3) * 0.2
        x = rng.standard_normal(3)
        y = float(x.sum() + rng.standard_normal())
        st.gram_sum += np.outer(model.psi(theta, x, y),
                                model.psi(theta, x, y))
        st.hessian_sum += np.outer(model.hessian_factor(theta, x, y),
                                   model.hessian_factor(theta, x, y))
        st.n += 1
    nonpriv = PrivacyBudget.non_private()
    with_rng = plugin_sandwich(st, model, nonpriv, NoiseSource(1, 0))
    without = plugin_sandwich(st, model, nonpriv, None)
    assert np.array_equal(with_rng, without)


def test_prs_wider_than_ppi_in_most_replications(small_table):
    d = SimDesign(p=3, n=4000, mu=1.0, replications=50, seed=13)
    results = run_design(d, small_table)
    wider = 0
    for fit in results:
        al_plugin = (fit.intervals["plugin"][0, 0, 1:, 1]
                     - fit.intervals["plugin"][0, 0, 1:, 0]).mean()
        al_rs = (fit.intervals["rs"][0, 0, 1:, 1]
                 - fit.intervals["rs"][0, 0, 1:, 0]).mean()
        wider += al_rs > al_plugin
    assert wider >= 0.8 * d.replications


def test_method_labels():
    assert method_label("plugin", True) == "PPI"
    assert method_label("plugin", False) == "PI"
    assert method_label("rs", True) == "PRS"
    assert method_label("rs", False) == "RS"
    with pytest.raises(DomainError):
        method_label("other", True)


def test_aggregate_degenerate_full_coverage():
    d = SimDesign(p=2, n=10, replications=3, seed=1, eval_ns=(10,))
    dim = d.dim
    results = []
    for _ in range(3):
        bounds = np.zeros((1, 1, dim, 2))
        bounds[..., 0] = 0.0
        bounds[..., 1] = 2.0  # always covers theta0 = 1
        results.append(FitResult(
            eval_ns=(10,), levels=(0.95,),
            theta_bar=np.ones((1, dim)),
            intervals={"plugin": bounds, "rs": bounds.copy()},
            sigma_diag=np.ones((1, dim)), vhat_diag=np.ones((1, dim))))
    report = aggregate(results, d)
    for row in report.summary:
        assert row.cp == 1.0
        assert row.al == pytest.approx(2.0)
        assert row.cp_se >= 0 and row.al_se >= 0


def test_aggregate_requires_results():
    with pytest.raises(DomainError):
        aggregate([], SimDesign(p=2, n=10))


def test_coverage_monotone_in_level(small_table):
    d = SimDesign(p=2, n=3000, mu=2.0, replications=40, seed=14,
                  levels=(0.9, 0.99))
    report = simulate_design(d, small_table)
    for label in set(report.methods.values()):
        low = report.row(label, 3000, 0.9)
        high = report.row(label, 3000, 0.99)
        assert high.cp >= low.cp
        assert high.al >= low.al


def test_simulation_report_is_pure_function_of_design(small_table):
    d = SimDesign(p=2, n=800, mu=1.0, replications=5, seed=21,
                  eval_ns=(400, 800))
    r1 = simulate_design(d, small_table)
    r2 = simulate_design(d, small_table)
    assert r1.summary == r2.summary
    assert np.array_equal(r1.theta_bar, r2.theta_bar)


def test_quantile_levels_for_table():
    d = SimDesign(p=2, n=100, levels=(0.9, 0.95, 0.99))
    assert d.quantile_levels() == (0.95, 0.975, 0.995)


def test_replication_errors_carry_the_index(small_table, monkeypatch):
    import privstream.simulate as sim

    def boom(*args, **kwargs):
        raise DomainError("synthetic failure")

    monkeypatch.setattr(sim, "fit_stream", boom)
    d = SimDesign(p=2, n=50, replications=5, seed=3)
    with pytest.raises(DomainError, match="replication 3: synthetic"):
        run_replication(d, 3, small_table)
