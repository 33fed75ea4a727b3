"""Effective sample size and coverage across trials."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .. import glm
from ..data import Dataset, EstimandSpec
from ..errors import NonpositiveVariance
from ..error_model import estimate_hessian_inverse_column, pilot_theta

ESS_CAP = 10  # reported n_eff is capped at ESS_CAP * n


def uniform_variance_curve(data: Dataset, spec: EstimandSpec):
    """Coefficients ``(A, B)`` of the uniform-sampling variance ``V(m) = A + B / m``.

    For the mean ``B = mean((Y - f)^2)`` and ``A = (var(Y) - B) / n``. For
    regressions the same form is applied to the coordinate's influence terms
    with labels and with predictions, fitted on the full labeled data.
    """
    if not data.fully_labeled:
        raise ValueError("the variance curve needs fully labeled data")
    n = data.n
    y, f = data.labels, data.predictions
    if spec.kind == "mean":
        B = float(np.mean((y - f) ** 2))
        return float((np.var(y) - B) / n), B
    X = spec.design(data.features)
    theta = pilot_theta(spec, data, np.arange(n))
    h = estimate_hessian_inverse_column(spec, data, theta).h
    fam = glm.loss_family(spec.kind)
    s_y = fam.gradient(theta, X, y) @ h
    d = s_y - fam.gradient(theta, X, f) @ h
    B = float(np.mean(d**2))
    return float((np.var(s_y) - B) / n), B


def ess_from_curve(V_hat: float, A: float, B: float) -> float:
    """Invert ``V(m) = A + B / m``; ``+inf`` when ``V_hat <= A``."""
    if not V_hat > 0:
        raise NonpositiveVariance(f"variance must be positive, got {V_hat}")
    if V_hat <= A:
        return math.inf
    return B / (V_hat - A)


def effective_sample_size(V_hat: float, data: Dataset, spec: EstimandSpec = EstimandSpec()) -> float:
    """Uniform-sampling budget whose variance equals ``V_hat``."""
    A, B = uniform_variance_curve(data, spec)
    return ess_from_curve(V_hat, A, B)


def coverage(records, theta_star=None) -> tuple[float, int]:
    """Fraction of successful trials whose interval contains the target.

    ``theta_star`` defaults to each record's own target. Returns
    ``(proportion, n_failed)``; the proportion is NaN if no trial succeeded.
    """
    ok = [r for r in records if not r.failed]
    failed = len(records) - len(ok)
    if not ok:
        return float("nan"), failed
    hits = 0
    for r in ok:
        t = r.theta_star if theta_star is None else theta_star
        hits += r.ci_lo <= t <= r.ci_hi
    return hits / len(ok), failed


def _capped(v, n):
    return min(v, ESS_CAP * n)


@dataclass
class CellMetrics:
    method: str
    budget: int
    trials: int
    failures: int
    mean_estimate: float
    sd_estimate: float
    V_hat: float
    n_eff: float
    n_eff_sd: float
    n_eff_empirical: float
    coverage: float
    mean_rho: float
    mean_c: float

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


@dataclass
class MetricsSummary:
    cells: list = field(default_factory=list)
    records: list = field(default_factory=list)

    def cell(self, method: str, budget: int) -> CellMetrics:
        for c in self.cells:
            if c.method == method and c.budget == budget:
                return c
        raise KeyError((method, budget))

    @property
    def methods(self) -> list:
        seen = []
        for c in self.cells:
            if c.method not in seen:
                seen.append(c.method)
        return seen

    @property
    def budgets(self) -> list:
        return sorted({c.budget for c in self.cells})

    def to_dict(self) -> dict:
        return {"cells": [c.to_dict() for c in self.cells]}


def _cell(method, budget, recs) -> CellMetrics:
    ok = [r for r in recs if not r.failed]
    nan = float("nan")
    if not ok:
        return CellMetrics(method, budget, len(recs), len(recs), nan, nan, nan, nan, nan, nan, nan, nan, nan)
    est = np.array([r.estimate for r in ok])
    n = ok[0].n
    per_trial = []
    for r in ok:
        v = r.sigma2_hat / r.n
        per_trial.append(_capped(ess_from_curve(v, r.A, r.B), r.n) if v > 0 else ESS_CAP * r.n)
    per_trial = np.array(per_trial)
    V_hat = float(np.var(est, ddof=1)) if est.size > 1 else nan
    if est.size > 1 and V_hat > 0:
        emp = _capped(ess_from_curve(V_hat, np.mean([r.A for r in ok]), np.mean([r.B for r in ok])), n)
    else:
        emp = nan
    cov, failed = coverage(recs)
    return CellMetrics(
        method=method,
        budget=budget,
        trials=len(recs),
        failures=failed,
        mean_estimate=float(est.mean()),
        sd_estimate=float(est.std(ddof=1)) if est.size > 1 else 0.0,
        V_hat=V_hat,
        n_eff=float(per_trial.mean()),
        n_eff_sd=float(per_trial.std(ddof=1)) if per_trial.size > 1 else 0.0,
        n_eff_empirical=float(emp),
        coverage=cov,
        mean_rho=float(np.mean([r.rho for r in ok])),
        mean_c=float(np.mean([r.c for r in ok])),
    )


def summarize(records) -> MetricsSummary:
    """Per (method, budget) metrics, in first-seen order.

    ``n_eff`` averages the per-trial plug-in value ``B / (sigma2_hat / n - A)``;
    ``n_eff_empirical`` inverts the across-trial variance of the estimates.
    """
    groups = {}
    for r in records:
        groups.setdefault((r.method, r.budget), []).append(r)
    return MetricsSummary([_cell(m, b, rs) for (m, b), rs in groups.items()], list(records))
