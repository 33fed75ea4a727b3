"""Choosing the interpolation parameter rho, plain or robust to misspecified errors.

The robust problem is ``min_rho max_{eps in C} mean((ehat2 + eps) / pi_rho)``.
The outer minimization is a grid search; every supported constraint set has
a closed-form inner maximizer because the objective is linear in ``eps``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .data import Budget
from .errors import BurnInTooSmall, ConfigError, EmptyBurnIn
from .error_model import ErrorEstimate
from .paths import SamplingRule, path_matrix

CONSTRAINT_KINDS = ("none", "l2", "l1", "rel_l1", "rel_l2", "structured")
_KIND_ALIASES = {"rel-l1": "rel_l1", "rel-l2": "rel_l2", "relativel1": "rel_l1", "relativel2": "rel_l2"}
TIE_RTOL = 1e-12
OVERCONFIDENT, OTHER = 1, 0


@dataclass(frozen=True, eq=False)
class ConstraintSet:
    kind: str = "l2"
    c: float = 0.0
    region_labels: np.ndarray | None = None
    c_per_region: dict = field(default_factory=dict)

    def __post_init__(self):
        kind = str(self.kind).lower()
        kind = _KIND_ALIASES.get(kind, kind)
        if kind not in CONSTRAINT_KINDS:
            raise ConfigError(f"unknown constraint kind {self.kind!r}")
        object.__setattr__(self, "kind", kind)
        if not self.c >= 0:
            raise ConfigError("constraint radius must be nonnegative")
        if kind == "structured":
            if self.region_labels is None:
                raise ConfigError("structured constraint needs region labels")
            labels = np.asarray(self.region_labels, dtype=int).reshape(-1)
            object.__setattr__(self, "region_labels", labels)
            radii = {int(k): float(v) for k, v in self.c_per_region.items()}
            if any(v < 0 for v in radii.values()):
                raise ConfigError("region radii must be nonnegative")
            object.__setattr__(self, "c_per_region", radii)

    def with_radius(self, c) -> ConstraintSet:
        """Same set with its scalar radius replaced (the overconfident region's, if structured)."""
        if self.kind == "structured":
            radii = dict(self.c_per_region)
            radii[OVERCONFIDENT] = float(c)
            return ConstraintSet("structured", float(c), self.region_labels, radii)
        return ConstraintSet(self.kind, float(c))


@dataclass(frozen=True)
class RhoGrid:
    step: float = 0.01

    def __post_init__(self):
        if not 0 < self.step <= 1:
            raise ConfigError("rho step must lie in (0, 1]")

    @property
    def points(self) -> np.ndarray:
        m = 1.0 / self.step
        if abs(m - round(m)) < 1e-9:
            return np.linspace(0.0, 1.0, int(round(m)) + 1)
        pts = np.arange(0.0, 1.0, self.step)
        return np.append(pts, 1.0)


def objective(ehat2, rule: SamplingRule) -> float:
    """Variance surrogate ``mean(ehat2 / pi)``."""
    e = ehat2.values if isinstance(ehat2, ErrorEstimate) else np.asarray(ehat2, dtype=float)
    return float(np.mean(e / rule.probs))


def _l2_direction(w, c):
    norm = np.linalg.norm(w)
    if norm == 0 or c == 0:
        return np.zeros_like(w), 0.0
    return c * w / norm, c * norm


def _l1_direction(w, c):
    eps = np.zeros_like(w)
    if c == 0 or w.size == 0:
        return eps, 0.0
    i = int(np.argmax(w))  # first index on ties
    eps[i] = c
    return eps, c * w[i]


def inner_max(ehat2, rule: SamplingRule, cset: ConstraintSet):
    """Worst-case surrogate over ``cset``; returns ``(value, eps_star)``."""
    e = ehat2.values if isinstance(ehat2, ErrorEstimate) else np.asarray(ehat2, dtype=float)
    n = e.shape[0]
    w = 1.0 / (n * rule.probs)
    base = float(np.mean(e / rule.probs))
    kind, c = cset.kind, float(cset.c)
    if kind == "none":
        return base, np.zeros(n)
    if kind == "l2":
        eps, gain = _l2_direction(w, c)
    elif kind == "l1":
        eps, gain = _l1_direction(w, c)
    elif kind in ("rel_l2", "rel_l1"):
        g = e * w
        eta, gain = (_l2_direction if kind == "rel_l2" else _l1_direction)(g, c)
        eps = e * eta
    else:
        labels = cset.region_labels
        if labels.shape[0] != n:
            raise ConfigError("region labels must cover all units")
        eps = np.zeros(n)
        gain = 0.0
        for region in np.unique(labels):
            cr = cset.c_per_region.get(int(region), 0.0)
            mask = labels == region
            er, gr = _l2_direction(w[mask], cr)
            eps[mask] = er
            gain += gr
    return base + gain, eps


def inner_max_values(ehat2, P, cset: ConstraintSet) -> np.ndarray:
    """Worst-case surrogate for each row of a probability matrix ``P``."""
    e = ehat2.values if isinstance(ehat2, ErrorEstimate) else np.asarray(ehat2, dtype=float)
    n = e.shape[0]
    W = 1.0 / (n * P)
    base = (e / P).mean(axis=1)
    kind, c = cset.kind, float(cset.c)
    if kind == "none" or (kind != "structured" and c == 0):
        return base
    if kind == "l2":
        return base + c * np.linalg.norm(W, axis=1)
    if kind == "l1":
        return base + c * W.max(axis=1)
    if kind == "rel_l2":
        return base + c * np.linalg.norm(W * e, axis=1)
    if kind == "rel_l1":
        return base + c * (W * e).max(axis=1)
    labels = cset.region_labels
    if labels.shape[0] != n:
        raise ConfigError("region labels must cover all units")
    out = base.copy()
    for region in np.unique(labels):
        cr = cset.c_per_region.get(int(region), 0.0)
        if cr > 0:
            out += cr * np.linalg.norm(W[:, labels == region], axis=1)
    return out


@dataclass(frozen=True)
class RhoTrace:
    rho: np.ndarray
    objective: np.ndarray
    robust_value: np.ndarray

    def rows(self):
        return list(zip(self.rho.tolist(), self.objective.tolist(), self.robust_value.tolist()))


def solve_rho(path, pi: SamplingRule, budget: Budget, ehat2, cset: ConstraintSet, grid: RhoGrid = RhoGrid()):
    """Grid search for the rho minimizing the worst-case surrogate.

    Near-ties (relative 1e-12) resolve towards the larger rho, i.e. closer to
    uniform sampling. Returns ``(rho, trace)``.
    """
    pts = grid.points
    P = path_matrix(path, pi, budget, pts)
    e = ehat2.values if isinstance(ehat2, ErrorEstimate) else np.asarray(ehat2, dtype=float)
    k, vals = _argmin_on_grid(e, P, cset)
    return float(pts[k]), RhoTrace(pts, (e / P).mean(axis=1), vals)


def _argmin_on_grid(e, P, cset):
    vals = inner_max_values(e, P, cset)
    best = vals.min()
    tied = np.flatnonzero(vals <= best + TIE_RTOL * abs(best))
    return int(tied[-1]), vals


def default_c_grid(ehat2) -> np.ndarray:
    e = ehat2.values if isinstance(ehat2, ErrorEstimate) else np.asarray(ehat2, dtype=float)
    scale = float(np.linalg.norm(e))
    return np.concatenate([[0.0], scale * np.logspace(-2, 1, 7)])


@dataclass(frozen=True)
class CVResult:
    c_star: float
    candidates: np.ndarray
    scores: np.ndarray
    rhos: np.ndarray  # candidates x folds


def cross_validate_c(
    burn_in_idx,
    targets,
    fit_errors,
    initial_rule,
    path,
    budget: Budget,
    cset: ConstraintSet,
    c_grid=None,
    folds: int = 5,
    grid: RhoGrid = RhoGrid(),
    seed: int = 0,
) -> CVResult:
    """K-fold choice of the constraint radius on burn-in data.

    ``targets[k]`` is the squared residual (in error units) of burn-in unit
    ``burn_in_idx[k]``. ``fit_errors(train_positions)`` returns an
    :class:`ErrorEstimate` on all units fitted on those burn-in positions and
    ``initial_rule(ehat2)`` the starting rule. Each candidate is scored by the
    validation mean of ``target / pi_rho``; ties go to the larger radius.
    """
    burn_in_idx = np.asarray(burn_in_idx)
    targets = np.asarray(targets, dtype=float)
    m = burn_in_idx.size
    if folds < 2 or m < folds:
        raise BurnInTooSmall(f"need at least {max(folds, 2)} burn-in units for {folds}-fold CV, have {m}")
    if c_grid is None:
        c_grid = default_c_grid(fit_errors(np.arange(m)))
    c_grid = np.asarray(sorted(set(float(c) for c in c_grid)))
    order = np.random.default_rng(seed).permutation(m)
    parts = np.array_split(order, folds)
    scores = np.zeros((c_grid.size, folds))
    rhos = np.zeros((c_grid.size, folds))
    for f, val in enumerate(parts):
        train = np.setdiff1d(order, val)
        ehat2 = fit_errors(train)
        e = ehat2.values if isinstance(ehat2, ErrorEstimate) else np.asarray(ehat2, dtype=float)
        pts = grid.points
        # the path does not depend on c, so one matrix serves every candidate
        P = path_matrix(path, initial_rule(ehat2), budget, pts)
        for k, c in enumerate(c_grid):
            i, _ = _argmin_on_grid(e, P, cset.with_radius(c))
            rhos[k, f] = pts[i]
            scores[k, f] = np.mean(targets[val] / P[i, burn_in_idx[val]])
    mean_scores = scores.mean(axis=1)
    best = mean_scores.min()
    tied = np.flatnonzero(mean_scores <= best + TIE_RTOL * abs(best))
    return CVResult(float(c_grid[tied[-1]]), c_grid, mean_scores, rhos)


# region learner ---------------------------------------------------------------

@dataclass
class _Node:
    label: int
    feature: int = -1
    threshold: float = 0.0
    left: _Node | None = None
    right: _Node | None = None


def _gini(pos, total):
    p = pos / total
    return 2 * p * (1 - p)


def _leaf_label(excess):
    return OVERCONFIDENT if excess.mean() > 0 else OTHER


def _best_split(X, y, min_leaf):
    n = y.size
    parent = _gini(y.sum(), n) * n
    best = (parent - 1e-12, None, None)
    for j in range(X.shape[1]):
        order = np.argsort(X[:, j], kind="stable")
        xs, ys = X[order, j], y[order]
        left_pos = np.cumsum(ys)[:-1]
        left_n = np.arange(1, n)
        valid = (xs[1:] > xs[:-1]) & (left_n >= min_leaf) & (n - left_n >= min_leaf)
        if not valid.any():
            continue
        right_pos = ys.sum() - left_pos
        right_n = n - left_n
        imp = _gini(left_pos, left_n) * left_n + _gini(right_pos, right_n) * right_n
        imp = np.where(valid, imp, np.inf)
        k = int(np.argmin(imp))
        if imp[k] < best[0]:
            best = (imp[k], j, 0.5 * (xs[k] + xs[k + 1]))
    return best[1], best[2]


def _grow(X, y, excess, depth, min_leaf):
    node = _Node(_leaf_label(excess))
    if depth == 0 or y.min() == y.max():
        return node
    j, thr = _best_split(X, y, min_leaf)
    if j is None:
        return node
    go_left = X[:, j] <= thr
    node.feature, node.threshold = j, thr
    node.left = _grow(X[go_left], y[go_left], excess[go_left], depth - 1, min_leaf)
    node.right = _grow(X[~go_left], y[~go_left], excess[~go_left], depth - 1, min_leaf)
    return node


def _predict(node, X):
    out = np.empty(X.shape[0], dtype=int)
    stack = [(node, np.arange(X.shape[0]))]
    while stack:
        nd, idx = stack.pop()
        if nd.left is None:
            out[idx] = nd.label
            continue
        go_left = X[idx, nd.feature] <= nd.threshold
        stack.append((nd.left, idx[go_left]))
        stack.append((nd.right, idx[~go_left]))
    return out


def learn_regions(features, residuals_sq, ehat2, depth: int = 2, query=None, min_leaf: int = 5):
    """Shallow axis-aligned tree separating overconfident units (r^2 > ehat2).

    Splits are chosen greedily by Gini impurity of the per-unit indicator. A
    leaf is labeled overconfident when its mean ``r^2 - ehat2`` is positive,
    which is stabler than a majority vote when heavy-tailed residuals put
    only about half of an underestimated region above its estimate. Returns
    labels (1 = overconfident, 0 = other) for ``query``, or for the training
    rows when ``query`` is None.
    """
    X = np.asarray(features, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    r2 = np.asarray(residuals_sq, dtype=float).reshape(-1)
    if r2.size == 0:
        raise EmptyBurnIn("no burn-in rows for the region learner")
    e = ehat2.values if isinstance(ehat2, ErrorEstimate) else np.asarray(ehat2, dtype=float)
    y = (r2 > e).astype(int)
    tree = _grow(X, y, r2 - e, int(depth), min_leaf)
    Q = X if query is None else np.asarray(query, dtype=float)
    if Q.ndim == 1:
        Q = Q[:, None]
    return _predict(tree, Q)
