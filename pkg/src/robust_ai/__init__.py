"""Robust active statistical inference.

Budget-preserving sampling rules between uncertainty-based and uniform
sampling, a minimax choice of the interpolation parameter that guards
against misspecified error estimates, and inverse-probability-weighted
estimators with normal confidence intervals.
"""

from .data import Budget, BurnInPlan, Dataset, EstimandSpec, load_csv, split_burn_in, write_csv
from .error_model import ErrorEstimate, HessianColumn, fit_binned_error, fit_knn_error
from .errors import ConfigError, DataError, NumericError, RobustAIError
from .estimation import EstimateResult, estimate_m, estimate_mean, variance_plugin
from .paths import PathKind, SamplingRule, normalize_to_budget, path_eval, uniform_rule
from .robust import ConstraintSet, RhoGrid, cross_validate_c, inner_max, learn_regions, objective, solve_rho
from .sampler import LabelDraw, budget_audit, draw_labels

__version__ = "0.1.0"

__all__ = [
    "Budget",
    "BurnInPlan",
    "ConfigError",
    "ConstraintSet",
    "DataError",
    "Dataset",
    "ErrorEstimate",
    "EstimandSpec",
    "EstimateResult",
    "HessianColumn",
    "LabelDraw",
    "NumericError",
    "PathKind",
    "RhoGrid",
    "RobustAIError",
    "SamplingRule",
    "budget_audit",
    "cross_validate_c",
    "draw_labels",
    "estimate_m",
    "estimate_mean",
    "fit_binned_error",
    "fit_knn_error",
    "inner_max",
    "learn_regions",
    "load_csv",
    "normalize_to_budget",
    "objective",
    "path_eval",
    "solve_rho",
    "split_burn_in",
    "uniform_rule",
    "variance_plugin",
    "write_csv",
]
