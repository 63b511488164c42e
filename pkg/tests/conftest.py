"""Shared fixtures.

The heavy Monte Carlo computations (the million-path critical-value
table and the full-scale simulation grids) are session-scoped and
shared across test modules; everything is seeded, so reruns are
bit-reproducible.
"""

import math
import os

import numpy as np
import pytest

from privstream import SimDesign, aggregate, run_design
from privstream.inference import critical_values
from privstream.privacy import NoiseSource

ACCEPT_SEED = 20260810

TABLE_LEVELS = (0.5, 0.9, 0.95, 0.975, 0.99, 0.995)
BENCHMARK_EVAL_NS = (40_000, 80_000, 100_000, 120_000, 160_000, 200_000)
# log-spaced last-iterate snapshots over [1e3, 1e5] for the rate check
SNAPSHOT_NS = tuple(int(round(10 ** e)) for e in np.linspace(3, 5, 13))


def workers():
    env = os.environ.get("PRIVSTREAM_WORKERS")
    if env:
        return max(1, int(env))
    return min(2, os.cpu_count() or 1)


@pytest.fixture(scope="session")
def critval_table():
    """Acceptance-grade table: 1e6 paths on a 1e3 grid."""
    return critical_values(TABLE_LEVELS, paths=1_000_000, grid=1_000,
                           rng=NoiseSource(97, 0), workers=workers())


@pytest.fixture(scope="session")
def small_table():
    """Cheap table for tests that only need plausible quantiles."""
    return critical_values(TABLE_LEVELS, paths=50_000, grid=1_000,
                           rng=NoiseSource(11, 0))


def benchmark_design(mu: float) -> SimDesign:
    return SimDesign(
        family="huber_linear", p=3, n=200_000, mu=mu,
        sigma_structure="identity", replications=200, levels=(0.95,),
        seed=ACCEPT_SEED, eval_ns=BENCHMARK_EVAL_NS,
        snapshot_ns=SNAPSHOT_NS if math.isinf(mu) else ())


@pytest.fixture(scope="session")
def benchmark_runs(critval_table):
    """Replication results for the benchmark budget grid (p = 3)."""
    out = {}
    for mu in (math.inf, 1.0, 2.0):
        design = benchmark_design(mu)
        out[mu] = (design, run_design(design, critval_table))
    return out


@pytest.fixture(scope="session")
def benchmark_reports(benchmark_runs):
    return {mu: aggregate(results, design)
            for mu, (design, results) in benchmark_runs.items()}


@pytest.fixture(scope="session")
def level_sweep_reports(critval_table):
    """p = 5 designs at three nominal levels for the coverage sweep."""
    out = {}
    for mu in (1.0, 2.0):
        design = SimDesign(
            family="huber_linear", p=5, n=200_000, mu=mu,
            sigma_structure="identity", replications=200,
            levels=(0.90, 0.95, 0.99), seed=ACCEPT_SEED + 1,
            eval_ns=(200_000,))
        out[mu] = aggregate(run_design(design, critval_table), design)
    return out
