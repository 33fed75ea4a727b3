import itertools

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from robust_ai.data import Budget, Dataset, EstimandSpec
from robust_ai.errors import ConfigError, MissingLabelAtSampledUnit
from robust_ai.estimation import (
    confidence_interval,
    estimate_m,
    estimate_mean,
    pseudo_outcomes,
    variance_plugin,
)
from robust_ai.paths import SamplingRule, normalize_to_budget, uniform_rule
from robust_ai.sampler import LabelDraw


def _data(f, y, X=None):
    f = np.asarray(f, dtype=float)
    X = np.zeros((f.size, 1)) if X is None else X
    return Dataset(X, f, y, np.ones(f.size, dtype=bool))


def _rule(p):
    p = np.asarray(p, dtype=float)
    n_b = p.sum()
    n = p.size
    # rules with a non-integer total are scaled onto a larger virtual population
    k = 1
    while abs(n_b * k - round(n_b * k)) > 1e-9:
        k += 1
    return SamplingRule(p, Budget(int(round(n_b * k)), n * k))


def test_hand_example():
    d = _data([0.5, 0.5, 0.5], [1, 0, 1])
    res = estimate_mean(d, LabelDraw([1, 0, 0], 0), _rule([0.5, 0.5, 0.5]))
    assert res.estimate == pytest.approx(2.5 / 3)


def test_perfect_predictions(rng):
    y = rng.normal(size=10)
    res = estimate_mean(_data(y, y), LabelDraw(rng.uniform(size=10) < 0.5, 0), uniform_rule(Budget(5, 10), 10))
    assert res.estimate == pytest.approx(y.mean())
    assert res.sigma2_hat == pytest.approx(np.var(y))


def test_full_observation(rng):
    y = rng.normal(size=10)
    res = estimate_mean(_data(np.zeros(10), y), LabelDraw(np.ones(10), 0), uniform_rule(Budget(10, 10), 10))
    assert res.estimate == pytest.approx(y.mean())
    assert res.sigma2_hat == pytest.approx(np.var(y))


def test_plugin_matches_enumeration_small_case():
    # f = 0.5, Y = 1, pi = 0.5: exact variance over xi is (1/16) * 4 * 0.25 * 1
    d = _data([0.5] * 4, [1.0] * 4)
    rule = uniform_rule(Budget(2, 4), 4)
    res = estimate_mean(d, LabelDraw([1, 0, 1, 0], 0), rule)
    exact = _enumerate(d.predictions, d.labels, rule.probs)[1]
    assert res.sigma2_hat / 4 == pytest.approx(exact, rel=0.1)


def _enumerate(f, y, p):
    """Exact mean and variance of the estimator over all 2^n label draws."""
    n = f.size
    xi = np.array(list(itertools.product([0, 1], repeat=n)), dtype=float)
    prob = np.prod(np.where(xi == 1, p, 1 - p), axis=1)
    est = (f + (y - f) * xi / p).mean(axis=1)
    m = prob @ est
    return m, prob @ (est - m) ** 2


@given(st.integers(0, 100_000), st.integers(1, 8))
def test_unbiased_and_variance_identity(seed, n):
    rng = np.random.default_rng(seed)
    f = rng.normal(size=n)
    y = rng.normal(size=n)
    p = rng.uniform(0.05, 1.0, size=n)
    m, v = _enumerate(f, y, p)
    assert m == pytest.approx(y.mean(), abs=1e-12)
    assert v == pytest.approx(np.sum((y - f) ** 2 * (1 / p - 1)) / n**2, abs=1e-12)


def test_missing_label_raises():
    d = Dataset(np.zeros((3, 1)), [0.0, 0.0, 0.0], [1.0, np.nan, 2.0], [True, False, True], row_ids=[7, 8, 9])
    with pytest.raises(MissingLabelAtSampledUnit) as info:
        pseudo_outcomes(d, LabelDraw([1, 1, 0], 0), uniform_rule(Budget(3, 3), 3))
    assert info.value.rows == [8]


def test_unlabeled_rows_outside_draw_are_fine():
    d = Dataset(np.zeros((3, 1)), [0.0, 0.0, 0.0], [1.0, np.nan, 2.0], [True, False, True])
    res = estimate_mean(d, LabelDraw([1, 0, 1], 0), uniform_rule(Budget(3, 3), 3))
    assert np.isfinite(res.estimate)


def test_zero_labels_diagnostic(rng):
    f = rng.normal(size=6)
    res = estimate_mean(_data(f, f + 1), LabelDraw(np.zeros(6), 0), uniform_rule(Budget(3, 6), 6))
    assert res.diagnostics["zero_labels"]
    assert res.estimate == pytest.approx(f.mean())


def test_mean_reduction_is_exact(rng):
    n = 50
    d = _data(rng.normal(size=n), rng.normal(size=n))
    rule = normalize_to_budget(rng.gamma(1.0, size=n), Budget(10, n))
    draw = LabelDraw(rng.uniform(size=n) < rule.probs, 0)
    a = estimate_mean(d, draw, rule)
    b = estimate_m(EstimandSpec("mean"), d, draw, rule)
    assert a.estimate == b.estimate and a.sigma2_hat == b.sigma2_hat and a.ci == b.ci


def test_linear_regression_zero_residuals(rng):
    X = rng.normal(size=(40, 2))
    beta = np.array([1.0, -0.5, 2.0])
    f = beta[0] + X @ beta[1:]
    d = Dataset(X, f, f, np.ones(40, dtype=bool))
    rule = uniform_rule(Budget(10, 40), 40)
    res = estimate_m(EstimandSpec("linreg", 2), d, LabelDraw(rng.uniform(size=40) < 0.25, 0), rule)
    np.testing.assert_allclose(res.theta_hat, beta, atol=1e-10)
    assert res.estimate == pytest.approx(2.0)


def test_logistic_matches_grid_minimizer(rng):
    n = 50
    x = rng.normal(size=n)
    p = 1 / (1 + np.exp(-(0.3 + 1.2 * x)))
    y = (rng.uniform(size=n) < p).astype(float)
    f = np.clip(p + rng.normal(0, 0.1, n), 0.01, 0.99)
    d = Dataset(x[:, None], f, y, np.ones(n, dtype=bool))
    rule = normalize_to_budget(np.minimum(f, 1 - f), Budget(20, n))
    draw = LabelDraw(rng.uniform(size=n) < rule.probs, 0)
    res = estimate_m(EstimandSpec("logreg", 1), d, draw, rule)
    yt = pseudo_outcomes(d, draw, rule)

    def loss(a, b):
        eta = a[..., None] + b[..., None] * x
        return np.mean(np.logaddexp(0, eta) - yt * eta, axis=-1)

    center = np.zeros(2)
    for width in (4.0, 0.1, 0.004):
        g = np.linspace(-width, width, 81)
        A, B = np.meshgrid(center[0] + g, center[1] + g, indexing="ij")
        k = np.unravel_index(np.argmin(loss(A, B)), A.shape)
        center = np.array([A[k], B[k]])
    np.testing.assert_allclose(res.theta_hat, center, atol=1e-3)


def test_variance_plugin_full_observation_regression(rng):
    n = 60
    X = rng.normal(size=(n, 1))
    y = 1 + 2 * X[:, 0] + rng.normal(size=n)
    d = Dataset(X, np.zeros(n), y, np.ones(n, dtype=bool))
    spec = EstimandSpec("linreg", 1)
    rule = uniform_rule(Budget(n, n), n)
    draw = LabelDraw(np.ones(n), 0)
    res = estimate_m(spec, d, draw, rule)
    D = spec.design(X)
    H = D.T @ D / n
    h = np.linalg.solve(H, [0, 1])
    infl = -(y - D @ res.theta_hat) * (D @ h)
    assert variance_plugin(spec, d, draw, rule, res.theta_hat) == pytest.approx(np.var(infl))


def test_interval_quantiles():
    lo, hi = confidence_interval(0.0, 1.0, 100, 0.1)
    assert hi == pytest.approx(1.64485 * 0.1, rel=1e-5)
    lo, hi = confidence_interval(0.0, 1.0, 1, 0.5)
    assert hi == pytest.approx(0.67449, rel=1e-5)
    assert confidence_interval(3.0, 0.0, 10, 0.9) == (3.0, 3.0)
    with pytest.raises(ConfigError):
        confidence_interval(0.0, 1.0, 10, 1.0)


@given(st.floats(-1e3, 1e3), st.floats(0, 1e3), st.integers(1, 10_000), st.floats(0.01, 0.99))
def test_interval_symmetric(est, s2, n, alpha):
    lo, hi = confidence_interval(est, s2, n, alpha)
    assert (hi - est) == pytest.approx(est - lo, rel=1e-9, abs=1e-9)


def test_result_json_keys(rng):
    d = _data([0.5] * 3, [1, 0, 1])
    res = estimate_mean(d, LabelDraw([1, 0, 0], 0), _rule([0.5] * 3))
    assert set(res.to_dict()) == {"theta_hat", "estimate", "sigma2_hat", "ci_lo", "ci_hi", "n_labeled", "alpha",
                                  "diagnostics"}
