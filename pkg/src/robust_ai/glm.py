"""Loss families and solvers for the weighted M-estimation problem.

For the three supported estimands the loss is linear in the label, so the
active objective ``mean((1 - w) * loss(x, f) + w * loss(x, y))`` with
``w = xi / pi`` equals the plain loss evaluated at the pseudo-outcome
``f + w * (y - f)``. All solvers below work on that pseudo-outcome.
"""

from __future__ import annotations

import numpy as np
from scipy.special import expit

from .errors import NoConvergence, SingularHessian, SingularSystem

MAX_CONDITION = 1e12


def _softplus(eta):
    return np.maximum(eta, 0.0) + np.log1p(np.exp(-np.abs(eta)))


class LossFamily:
    """Per-unit loss, gradient and Hessian, vectorized over rows of ``X``."""

    name = ""

    def loss(self, theta, X, y):
        raise NotImplementedError

    def gradient(self, theta, X, y):
        raise NotImplementedError

    def hessian(self, theta, X, y):
        raise NotImplementedError


class SquaredLoss(LossFamily):
    """``(y - x'theta)^2 / 2``; the mean is the intercept-only case."""

    name = "squared"

    def loss(self, theta, X, y):
        return 0.5 * (y - X @ theta) ** 2

    def gradient(self, theta, X, y):
        return -(y - X @ theta)[:, None] * X

    def hessian(self, theta, X, y):
        return X[:, :, None] * X[:, None, :]


class LogisticLoss(LossFamily):
    """``log(1 + exp(x'theta)) - y x'theta``; soft labels in [0, 1] allowed."""

    name = "logistic"

    def loss(self, theta, X, y):
        eta = X @ theta
        return _softplus(eta) - y * eta

    def gradient(self, theta, X, y):
        return (expit(X @ theta) - y)[:, None] * X

    def hessian(self, theta, X, y):
        mu = expit(X @ theta)
        return (mu * (1 - mu))[:, None, None] * X[:, :, None] * X[:, None, :]


def loss_family(kind: str) -> LossFamily:
    return LogisticLoss() if kind == "logistic_regression" else SquaredLoss()


def hessian_matrix(kind: str, X, theta=None):
    """Average Hessian; label-free for all three families."""
    n = X.shape[0]
    if kind == "logistic_regression":
        mu = expit(X @ theta)
        return (X * (mu * (1 - mu))[:, None]).T @ X / n
    return X.T @ X / n


def hessian_inverse_column(H, j):
    H = np.atleast_2d(H)
    cond = np.linalg.cond(H)
    if not np.isfinite(cond) or cond > MAX_CONDITION:
        raise SingularHessian(f"Hessian condition number {cond:.3g} exceeds {MAX_CONDITION:g}")
    e = np.zeros(H.shape[0])
    e[j] = 1.0
    return np.linalg.solve(H, e)


def solve_least_squares(X, ytilde):
    """Normal equations ``X'X theta = X' ytilde``."""
    G = X.T @ X
    if np.linalg.cond(G) > MAX_CONDITION:
        raise SingularSystem("design matrix is rank deficient")
    return np.linalg.solve(G, X.T @ ytilde)


def _logistic_objective(theta, X, yt):
    eta = X @ theta
    return float(np.mean(_softplus(eta) - yt * eta))


def solve_logistic(X, ytilde, tol=1e-8, max_iter=100, theta0=None):
    """Damped Newton on ``mean(softplus(X theta) - ytilde * X theta)``.

    Falls back to backtracking gradient descent when a Newton direction is
    unusable. Returns ``(theta, iterations, used_fallback)``.
    """
    n, p = X.shape
    theta = np.zeros(p) if theta0 is None else np.array(theta0, dtype=float)
    f = _logistic_objective(theta, X, ytilde)
    fallback = False
    for it in range(1, max_iter + 1):
        mu = expit(X @ theta)
        grad = X.T @ (mu - ytilde) / n
        gnorm = float(np.linalg.norm(grad))
        if gnorm < tol:
            return theta, it - 1, fallback
        H = (X * (mu * (1 - mu))[:, None]).T @ X / n
        step = None
        try:
            if np.linalg.cond(H) < MAX_CONDITION:
                step = -np.linalg.solve(H, grad)
                if not np.all(np.isfinite(step)) or step @ grad >= 0:
                    step = None
        except np.linalg.LinAlgError:
            step = None
        if step is None:
            fallback = True
            step = -grad
        t = 1.0
        while t > 1e-12:
            cand = theta + t * step
            fc = _logistic_objective(cand, X, ytilde)
            if fc <= f + 1e-4 * t * (grad @ step):
                break
            t *= 0.5
        else:
            raise NoConvergence(it, gnorm)
        theta, f = cand, fc
    mu = expit(X @ theta)
    gnorm = float(np.linalg.norm(X.T @ (mu - ytilde) / n))
    if gnorm < tol:
        return theta, max_iter, fallback
    raise NoConvergence(max_iter, gnorm)
