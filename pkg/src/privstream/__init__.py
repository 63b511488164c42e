"""Locally differentially private streaming estimation and inference.

One-pass noisy SGD over a data stream with Polyak-Ruppert averaging,
plus two online confidence-interval constructions (privatized plug-in
sandwich and random scaling) and a Monte Carlo harness for coverage
experiments.
"""

from .errors import (AccountingError, ConfigError, DomainError, ParseError,
                     PrivstreamError, SequencingError, StateError)
from .privacy import (INFINITE_BUDGET, NoiseSource, PrivacyBudget,
                      Sensitivity, compose_parallel, gaussian_mechanism,
                      matrix_gaussian_mechanism, plugin_release_budget)
from .models import (ExpectileModel, HuberLinearModel, LogisticModel,
                     LossModel, Observation, gradient, hessian_factor,
                     make_model, mallow_weight, sensitivity_bound)
from .sgd import SgdState, StepSchedule, run_stream, step
from .inference import (ConfidenceInterval, CriticalValueTable, Method,
                        PluginCovarianceState, RandomScalingState,
                        critical_values, plugin_interval, plugin_sandwich,
                        plugin_update, rs_interval, rs_update, rs_vhat)
from .simulate import (FitResult, SimDesign, SimulationReport, aggregate,
                       fit_stream, generate_stream, run_design,
                       run_replication, simulate_design)
from .dataio import Dataset, load_csv

__version__ = "0.1.0"

__all__ = [
    "AccountingError", "ConfigError", "DomainError", "ParseError",
    "PrivstreamError", "SequencingError", "StateError",
    "INFINITE_BUDGET", "NoiseSource", "PrivacyBudget", "Sensitivity",
    "compose_parallel", "gaussian_mechanism", "matrix_gaussian_mechanism",
    "plugin_release_budget",
    "ExpectileModel", "HuberLinearModel", "LogisticModel", "LossModel",
    "Observation", "gradient", "hessian_factor", "make_model",
    "mallow_weight", "sensitivity_bound",
    "SgdState", "StepSchedule", "run_stream", "step",
    "ConfidenceInterval", "CriticalValueTable", "Method",
    "PluginCovarianceState", "RandomScalingState", "critical_values",
    "plugin_interval", "plugin_sandwich", "plugin_update", "rs_interval",
    "rs_update", "rs_vhat",
    "FitResult", "SimDesign", "SimulationReport", "aggregate", "fit_stream",
    "generate_stream", "run_design", "run_replication", "simulate_design",
    "Dataset", "load_csv",
    "__version__",
]
