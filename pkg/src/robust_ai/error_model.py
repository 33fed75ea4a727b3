"""Fitting the squared-error function from burn-in labels.

The fitted values feed the variance surrogate ``mean(ehat2 / pi)``. For
regression estimands the base error is rescaled by ``(x'h)^2`` where ``h``
is a column of the inverse Hessian.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import glm
from .data import Dataset, EstimandSpec
from .errors import DataError, DimensionMismatch, EmptyBurnIn, KTooLarge

SOURCES = ("knn", "binned", "external_column", "binary")


@dataclass(frozen=True, eq=False)
class ErrorEstimate:
    values: np.ndarray
    source: str = "knn"

    def __post_init__(self):
        v = np.array(self.values, dtype=float).reshape(-1)
        if not np.all(np.isfinite(v)) or np.any(v < 0):
            raise DataError("error estimates must be finite and nonnegative")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)
        if self.source not in SOURCES:
            raise DataError(f"unknown error source {self.source!r}")

    @property
    def n(self) -> int:
        return self.values.shape[0]


@dataclass(frozen=True, eq=False)
class HessianColumn:
    h: np.ndarray

    def __post_init__(self):
        h = np.array(self.h, dtype=float).reshape(-1)
        if not np.all(np.isfinite(h)):
            raise DataError("Hessian column must be finite")
        object.__setattr__(self, "h", h)


def default_k(burn_in_size: int) -> int:
    return min(burn_in_size, max(5, math.ceil(math.sqrt(burn_in_size))))


def fit_knn_error(features, residuals_sq, k, query, chunk=2048) -> ErrorEstimate:
    """k-nearest-neighbour average of burn-in squared residuals.

    Exact distance ties are broken towards the lower burn-in row index.
    """
    B = np.asarray(features, dtype=float)
    r2 = np.asarray(residuals_sq, dtype=float).reshape(-1)
    Q = np.asarray(query, dtype=float)
    if B.ndim == 1:
        B = B[:, None]
    if Q.ndim == 1:
        Q = Q[:, None]
    m = r2.shape[0]
    if m == 0:
        raise EmptyBurnIn("no burn-in rows to fit on")
    if B.shape[0] != m or B.shape[1] != Q.shape[1]:
        raise DimensionMismatch("burn-in features, residuals and query disagree")
    if not 1 <= k <= m:
        raise KTooLarge(f"k={k} must lie in [1, {m}]")
    out = np.empty(Q.shape[0])
    if k == m:
        out[:] = r2.mean()
        return ErrorEstimate(out, "knn")
    for start in range(0, Q.shape[0], chunk):
        q = Q[start:start + chunk]
        d2 = ((q[:, None, :] - B[None, :, :]) ** 2).sum(axis=2)
        kth = np.partition(d2, k - 1, axis=1)[:, k - 1:k]
        less = d2 < kth
        eq = d2 == kth
        need = k - less.sum(axis=1, keepdims=True)
        take = less | (eq & (np.cumsum(eq, axis=1) <= need))
        out[start:start + chunk] = (take * r2).sum(axis=1) / k
    return ErrorEstimate(out, "knn")


def fit_binned_error(confidence, residuals_sq, bins, query_confidence) -> ErrorEstimate:
    """Equal-width confidence bins on [0, 1]; empty bins borrow the nearest filled bin."""
    c = np.asarray(confidence, dtype=float).reshape(-1)
    r2 = np.asarray(residuals_sq, dtype=float).reshape(-1)
    if c.size == 0:
        raise EmptyBurnIn("no burn-in rows to fit on")
    if bins < 1:
        raise DataError("bins must be at least 1")

    def index(v):
        return np.minimum((np.asarray(v) * bins).astype(int), bins - 1)

    ib = index(c)
    sums = np.bincount(ib, weights=r2, minlength=bins)
    counts = np.bincount(ib, minlength=bins)
    filled = np.flatnonzero(counts)
    table = np.empty(bins)
    # nearest filled bin; ties go to the lower bin
    for b in range(bins):
        src = filled[np.argmin(np.abs(filled - b))]
        table[b] = sums[src] / counts[src]
    return ErrorEstimate(table[index(query_confidence)], "binned")


def binary_error(predictions) -> ErrorEstimate:
    """Analytic ``p (1 - p)`` for binary labels with probability predictions."""
    p = np.asarray(predictions, dtype=float)
    return ErrorEstimate(np.clip(p * (1 - p), 0.0, None), "binary")


def external_error(values) -> ErrorEstimate:
    return ErrorEstimate(np.maximum(np.asarray(values, dtype=float), 0.0), "external_column")


def pilot_theta(spec: EstimandSpec, data: Dataset, labeled_idx=None):
    """Parameter fit on observed labels, with predictions standing in elsewhere."""
    X = spec.design(data.features)
    if labeled_idx is None:
        labeled_idx = np.flatnonzero(data.observed)
    y = data.predictions.copy()
    y[labeled_idx] = data.labels[labeled_idx]
    if spec.kind == "mean":
        return np.array([y.mean()])
    if spec.kind == "linear_regression":
        return glm.solve_least_squares(X, y)
    theta, _, _ = glm.solve_logistic(X, y)
    return theta


def estimate_hessian_inverse_column(spec: EstimandSpec, data: Dataset, pilot, j=None) -> HessianColumn:
    """Column ``j`` of the inverse average Hessian at ``pilot``."""
    if spec.kind == "mean":
        return HessianColumn(np.ones(1))
    j = spec.coordinate() if j is None else j
    X = spec.design(data.features)
    H = glm.hessian_matrix(spec.kind, X, np.asarray(pilot, dtype=float))
    return HessianColumn(glm.hessian_inverse_column(H, j))


def glm_error_transform(base: ErrorEstimate, design, h: HessianColumn) -> ErrorEstimate:
    X = np.asarray(design, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    if X.shape[0] != base.n or X.shape[1] != h.h.shape[0]:
        raise DimensionMismatch(f"design {X.shape} incompatible with {base.n} errors and h of length {h.h.shape[0]}")
    return ErrorEstimate(base.values * (X @ h.h) ** 2, base.source)
