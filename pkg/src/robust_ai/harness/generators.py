"""Synthetic data generators with known population targets."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..data import Budget, Dataset
from ..paths import normalize_to_budget, path_eval
from ..robust import ConstraintSet, inner_max


@dataclass(frozen=True, eq=False)
class Synthetic:
    data: Dataset
    true_e2: np.ndarray
    theta_star: float
    region: np.ndarray | None = None


def generate_toy_regions(n: int, seed) -> Synthetic:
    """Central hard region flanked by easy regions, with a misleading error estimate.

    ``X ~ U(-5, 5)``; the hard region is ``|X| <= 2``. Per-unit error
    magnitudes are ``N(1, var 0.25)`` (hard) and ``N(2, var 0.05)`` (easy);
    ``Y = e(X) Z`` around the prediction ``f = 0``. The supplied ``ehat2`` is
    0.25 in the hard region and 6.25 elsewhere, underestimating the hard
    region and overestimating the easy one. The population mean of Y is 0.
    """
    if n < 2:
        raise ValueError("need n >= 2")
    rng = np.random.default_rng(seed)
    x = rng.uniform(-5.0, 5.0, n)
    hard = np.abs(x) <= 2.0
    e = np.where(hard, rng.normal(1.0, 0.5, n), rng.normal(2.0, np.sqrt(0.05), n))
    y = e * rng.standard_normal(n)
    ehat2 = np.where(hard, 0.25, 6.25)
    data = Dataset(
        features=x[:, None],
        predictions=np.zeros(n),
        labels=y,
        observed=np.ones(n, dtype=bool),
        ehat2=ehat2,
    )
    return Synthetic(data, e**2, 0.0, hard)


GAUSSIAN_MU = 1.0


def generate_gaussian_mean(n: int, seed) -> Synthetic:
    """Heteroscedastic Gaussian mean problem with a misleading confidence score.

    ``X ~ N(0, I_2)``, ``f = mu + X1`` and ``Y = f + (0.5 + |X2|) Z``. The
    confidence column tracks ``|X1|`` instead of the true noise driver
    ``|X2|``, so sampling by ``1 - conf`` spends labels in the wrong place.
    """
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((n, 2))
    sd = 0.5 + np.abs(X[:, 1])
    f = GAUSSIAN_MU + X[:, 0]
    y = f + sd * rng.standard_normal(n)
    conf = np.clip(1.0 - 0.3 * (0.5 + np.abs(X[:, 0])), 0.02, 0.98)
    data = Dataset(
        features=X,
        predictions=f,
        labels=y,
        observed=np.ones(n, dtype=bool),
        confidence=conf,
    )
    return Synthetic(data, sd**2, GAUSSIAN_MU + 0.0)


GENERATORS = {
    "toy_regions": generate_toy_regions,
    "gaussian_mean": generate_gaussian_mean,
}


def perturbation_demo(seed=0, n=10, n_b=5, c=50.0, rho=0.5):
    """Worst-case perturbation of underestimated errors on a linear path.

    True magnitudes ``e ~ N(5, var 0.25)``, estimates ``ehat ~ N(3, var
    0.25)``, initial rule proportional to ``ehat``, linear path at ``rho``,
    l2 ball of radius ``c``. Reports the per-unit triples and the mean
    absolute gaps to the truth before and after perturbation.
    """
    rng = np.random.default_rng(seed)
    e = rng.normal(5.0, 0.5, n)
    ehat = np.abs(rng.normal(3.0, 0.5, n))
    budget = Budget(n_b, n)
    pi = normalize_to_budget(ehat, budget)
    rule = path_eval("linear", pi, budget, rho)
    ehat2 = ehat**2
    _, eps = inner_max(ehat2, rule, ConstraintSet("l2", c))
    perturbed = ehat2 + eps
    gap_before = float(np.mean(np.abs(ehat2 - e**2)))
    gap_after = float(np.mean(np.abs(perturbed - e**2)))
    return {
        "ehat2": ehat2.tolist(),
        "perturbed": perturbed.tolist(),
        "e2": (e**2).tolist(),
        "eps": eps.tolist(),
        "mean_abs_gap_before": gap_before,
        "mean_abs_gap_after": gap_after,
        "closer": gap_after < gap_before,
    }
