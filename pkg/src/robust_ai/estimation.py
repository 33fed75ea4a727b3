"""Active inference estimators, plug-in variances and normal intervals."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.stats import norm

from . import glm
from .data import Dataset, EstimandSpec
from .errors import ConfigError, MissingLabelAtSampledUnit
from .error_model import HessianColumn, estimate_hessian_inverse_column
from .paths import SamplingRule
from .sampler import LabelDraw

DEFAULT_ALPHA = 0.1


@dataclass
class EstimateResult:
    theta_hat: np.ndarray
    estimate: float
    sigma2_hat: float
    ci: tuple
    n_labeled: int
    alpha: float = DEFAULT_ALPHA
    diagnostics: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "theta_hat": [float(t) for t in np.atleast_1d(self.theta_hat)],
            "estimate": float(self.estimate),
            "sigma2_hat": float(self.sigma2_hat),
            "ci_lo": float(self.ci[0]),
            "ci_hi": float(self.ci[1]),
            "n_labeled": int(self.n_labeled),
            "alpha": float(self.alpha),
            "diagnostics": self.diagnostics,
        }


def confidence_interval(estimate: float, sigma2_hat: float, n: int, alpha: float = DEFAULT_ALPHA):
    if not 0 < alpha < 1:
        raise ConfigError("alpha must lie in (0, 1)")
    half = norm.ppf(1 - alpha / 2) * np.sqrt(max(sigma2_hat, 0.0) / n)
    return (float(estimate - half), float(estimate + half))


def pseudo_outcomes(data: Dataset, draw: LabelDraw, rule: SamplingRule) -> np.ndarray:
    """``f + (y - f) xi / pi``; units with ``xi = 0`` never touch their label."""
    xi = draw.xi
    if xi.shape[0] != data.n or rule.n != data.n:
        raise ConfigError("draw, rule and data must have the same length")
    missing = xi & ~data.observed
    if missing.any():
        raise MissingLabelAtSampledUnit(data.row_ids[missing])
    f = data.predictions
    resid = np.where(xi, data.labels - f, 0.0)
    return f + resid * xi / rule.probs


def _diagnostics(draw, rule):
    return {
        "max_inverse_weight": float(1.0 / rule.probs.min()),
        "iterations": 0,
        "fallback": False,
        "zero_labels": draw.realized_count == 0,
    }


def estimate_mean(data: Dataset, draw: LabelDraw, rule: SamplingRule, alpha: float = DEFAULT_ALPHA) -> EstimateResult:
    T = pseudo_outcomes(data, draw, rule)
    theta = float(np.mean(T))
    sigma2 = float(np.var(T))
    return EstimateResult(
        theta_hat=np.array([theta]),
        estimate=theta,
        sigma2_hat=sigma2,
        ci=confidence_interval(theta, sigma2, data.n, alpha),
        n_labeled=draw.realized_count,
        alpha=alpha,
        diagnostics=_diagnostics(draw, rule),
    )


def estimate_m(spec: EstimandSpec, data: Dataset, draw: LabelDraw, rule: SamplingRule,
               alpha: float = DEFAULT_ALPHA) -> EstimateResult:
    """Minimize the active M-estimation objective and attach a plug-in interval."""
    if spec.kind == "mean":
        return estimate_mean(data, draw, rule, alpha)
    data.check_estimand(spec)
    X = spec.design(data.features)
    yt = pseudo_outcomes(data, draw, rule)
    diag = _diagnostics(draw, rule)
    if spec.kind == "linear_regression":
        theta = glm.solve_least_squares(X, yt)
    else:
        theta, iters, fallback = glm.solve_logistic(X, yt)
        diag["iterations"] = iters
        diag["fallback"] = fallback
    sigma2 = variance_plugin(spec, data, draw, rule, theta)
    j = spec.coordinate()
    est = float(theta[j])
    return EstimateResult(
        theta_hat=theta,
        estimate=est,
        sigma2_hat=sigma2,
        ci=confidence_interval(est, sigma2, data.n, alpha),
        n_labeled=draw.realized_count,
        alpha=alpha,
        diagnostics=diag,
    )


def influence_terms(spec: EstimandSpec, X, pseudo, theta, h) -> np.ndarray:
    """Per-unit score ``grad_loss(theta; x, pseudo)' h`` (the label enters linearly)."""
    grads = glm.loss_family(spec.kind).gradient(np.asarray(theta, dtype=float), X, pseudo)
    return grads @ h


def variance_plugin(spec: EstimandSpec, data: Dataset, draw: LabelDraw, rule: SamplingRule,
                    theta_hat, h_j: HessianColumn | None = None) -> float:
    """Empirical variance of the per-unit influence terms of coordinate ``j``."""
    T = pseudo_outcomes(data, draw, rule)
    if spec.kind == "mean":
        return float(np.var(T))
    X = spec.design(data.features)
    if h_j is None:
        h_j = estimate_hessian_inverse_column(spec, data, theta_hat)
    return float(np.var(influence_terms(spec, X, T, theta_hat, h_j.h)))
