"""Repeated-trial simulations, metrics and reports."""

from .config import ExperimentConfig, MethodSpec, load_config
from .generators import GENERATORS, generate_gaussian_mean, generate_toy_regions, perturbation_demo
from .metrics import MetricsSummary, coverage, effective_sample_size, summarize, uniform_variance_curve
from .report import emit_report
from .runner import TrialRecord, plan_method, run_trials, trial_seed

__all__ = [
    "ExperimentConfig",
    "MethodSpec",
    "load_config",
    "GENERATORS",
    "generate_gaussian_mean",
    "generate_toy_regions",
    "perturbation_demo",
    "MetricsSummary",
    "coverage",
    "effective_sample_size",
    "summarize",
    "uniform_variance_curve",
    "emit_report",
    "TrialRecord",
    "plan_method",
    "run_trials",
    "trial_seed",
]
