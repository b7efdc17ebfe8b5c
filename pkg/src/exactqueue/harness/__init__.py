"""Oracles, replicated experiments and the command line."""

from .experiment import ExperimentConfig, Report, run_experiment, tune_drift_constant
from .oracles import erlang_pmf, gof_test

__all__ = ["ExperimentConfig", "Report", "run_experiment", "tune_drift_constant", "erlang_pmf", "gof_test"]
