"""Sampling rules and budget-preserving paths towards the uniform rule."""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .data import Budget
from .errors import AllZeroWeights, ConfigError, InfeasibleBudget, RhoOutOfRange

DEFAULT_FLOOR = 1e-3
BUDGET_TOL = 1e-9
ANGLE_TOL = 1e-10


class PathKind(str, enum.Enum):
    LINEAR = "linear"
    GEOMETRIC = "geometric"
    HELLINGER = "hellinger"

    @classmethod
    def parse(cls, value) -> PathKind:
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).lower())
        except ValueError:
            raise ConfigError(f"unknown path kind {value!r}") from None


@dataclass(frozen=True, eq=False)
class SamplingRule:
    """Per-unit labeling probabilities whose mean equals ``budget.rate``.

    ``len(probs)`` need not equal ``budget.n``; only the rate is used. This
    lets a rule for the post-burn-in phase live on all ``n`` units.
    """

    probs: np.ndarray
    budget: Budget
    floor: float = DEFAULT_FLOOR

    def __post_init__(self):
        p = np.array(self.probs, dtype=float).reshape(-1)
        p.setflags(write=False)
        object.__setattr__(self, "probs", p)
        if not 0 < self.floor <= 1:
            raise ConfigError("probability floor must lie in (0, 1]")
        # the floor may be undercut by rounding only
        if p.size == 0 or p.min() < self.floor * (1 - 1e-12) or p.max() > 1 + 1e-12:
            raise InfeasibleBudget("probabilities must lie in [floor, 1]")
        if abs(p.mean() - self.budget.rate) > BUDGET_TOL:
            raise InfeasibleBudget(
                f"mean probability {p.mean():.12g} differs from budget rate {self.budget.rate:.12g}"
            )

    @property
    def n(self) -> int:
        return self.probs.shape[0]


def uniform_rule(budget: Budget, n: int, floor: float = DEFAULT_FLOOR) -> SamplingRule:
    return SamplingRule(np.full(n, budget.rate), budget, min(floor, budget.rate))


def _clip_scale(w, total, floor):
    """Find ``s`` with ``sum(clip(s * w, floor, 1)) == total`` (exact segment solve).

    ``h(s) = sum(clip(s w, floor, 1))`` is piecewise linear and nondecreasing.
    Sorting weights in decreasing order sorts both breakpoint families
    (``floor / w`` and ``1 / w``) ascending, so every breakpoint is
    evaluated in one vectorized pass.
    """
    pos = w > 0
    n_zero = int((~pos).sum())
    wp = np.sort(w[pos])[::-1]
    m = wp.size
    # suffix sums from the small end: the free set is a contiguous run whose
    # sum is a difference of two suffix sums, which avoids cancellation
    # against much larger capped weights
    sw = np.concatenate([np.cumsum(wp[::-1])[::-1], [0.0]])
    lo, hi = floor / wp, 1.0 / wp
    cand = np.unique(np.concatenate([lo, hi]))

    def h(s):
        a = np.searchsorted(lo, s, side="left")  # lo_i < s: above floor
        b = np.searchsorted(hi, s, side="right")  # hi_i <= s: capped
        return floor * (m - a + n_zero) + s * (sw[b] - sw[a]) + b, a, b

    hv, a_all, b_all = h(cand)
    k = np.searchsorted(hv, total, side="left")
    if k >= cand.size:
        k = cand.size - 1
    if k < cand.size and np.isclose(hv[k], total, rtol=0, atol=1e-13 * max(total, 1)):
        s = cand[k]
        slope = sw[b_all[k]] - sw[a_all[k]]
        if slope > 0:
            # land exactly on the budget inside the breakpoint's segment
            s = s + (total - hv[k]) / slope
        return s
    # total lies strictly between cand[k-1] and cand[k]: the active sets are
    # those just to the left of cand[k]
    left = cand[k - 1] if k > 0 else 0.0
    mid = 0.5 * (left + cand[k])
    _, a, b = h(np.array([mid]))
    a, b = int(a[0]), int(b[0])
    slope = sw[b] - sw[a]
    const = floor * (m - a + n_zero) + b
    return (total - const) / slope


def normalize_to_budget(raw_weights, budget: Budget, floor: float = DEFAULT_FLOOR) -> SamplingRule:
    """Scale nonnegative weights to probabilities in ``[floor, 1]`` with mean ``budget.rate``.

    Water-filling: units whose scaled weight falls outside ``[floor, 1]`` are
    pinned at the bound and the residual budget is shared proportionally by
    the rest. The scale factor is solved exactly.
    """
    w = np.asarray(raw_weights, dtype=float).reshape(-1)
    n = w.size
    if n == 0 or np.any(~np.isfinite(w)) or np.any(w < 0):
        raise AllZeroWeights("weights must be finite and nonnegative")
    if not np.any(w > 0):
        raise AllZeroWeights("all weights are zero")
    w = w / w.max()
    # relative weights this small cannot be scaled into range; treat them as zero
    w[w < 1e-300] = 0.0
    rate = budget.rate
    total = rate * n
    if floor * n > total * (1 + 1e-12):
        raise InfeasibleBudget(f"floor {floor} times n exceeds the budget")
    n_pos = int((w > 0).sum())
    if n_pos + floor * (n - n_pos) < total * (1 - 1e-12):
        raise InfeasibleBudget("too few positive weights to spend the budget")
    if total >= n * (1 - 1e-15):
        return SamplingRule(np.ones(n), budget, floor)
    s = _clip_scale(w, total, floor)
    probs = np.clip(s * w, floor, 1.0)
    # remove rounding drift on the free units only
    free = (probs > floor) & (probs < 1.0)
    drift = total - probs.sum()
    if free.any() and drift != 0.0:
        probs[free] += drift * w[free] / w[free].sum()
    return SamplingRule(probs, budget, floor)


def _check_rho(rho):
    rho = float(rho)
    if not 0.0 <= rho <= 1.0 or np.isnan(rho):
        raise RhoOutOfRange(f"rho must lie in [0, 1], got {rho}")
    return rho


def _finish(values, budget, floor):
    """Accept in-range values; otherwise water-fill them back into ``[floor, 1]``."""
    if values.min() >= floor and values.max() <= 1.0:
        return SamplingRule(values, budget, floor)
    return normalize_to_budget(values, budget, floor)


def path_matrix(kind, pi: SamplingRule, budget: Budget, rhos) -> np.ndarray:
    """Rows are ``path_eval(kind, pi, budget, rho).probs`` for each rho.

    Vectorized over the grid; rows that leave ``[floor, 1]`` are water-filled
    individually.
    """
    kind = PathKind.parse(kind)
    rhos = np.array([_check_rho(r) for r in rhos])
    p = pi.probs
    r = budget.rate
    floor = pi.floor
    t = rhos[:, None]
    if kind is PathKind.LINEAR:
        P = (1.0 - t) * p + t * r
    elif kind is PathKind.GEOMETRIC:
        Q = p[None, :] ** (1.0 - t)
        P = r * Q / Q.mean(axis=1, keepdims=True)
    else:
        beta = hellinger_angle(p, r)
        if beta < ANGLE_TOL:
            P = (1.0 - t) * p + t * r
        else:
            s = np.sin(beta)
            P = ((np.sin((1.0 - t) * beta) * np.sqrt(p) + np.sin(t * beta) * np.sqrt(r)) / s) ** 2
    P[rhos == 0.0] = p
    P[rhos == 1.0] = r
    bad = (P.min(axis=1) < floor) | (P.max(axis=1) > 1.0)
    for k in np.flatnonzero(bad):
        P[k] = normalize_to_budget(P[k], budget, floor).probs
    return P


def path_eval(kind, pi: SamplingRule, budget: Budget, rho: float) -> SamplingRule:
    """Evaluate the budget-preserving path from ``pi`` (rho=0) to uniform (rho=1)."""
    kind = PathKind.parse(kind)
    rho = _check_rho(rho)
    floor = pi.floor
    r = budget.rate
    if rho == 0.0:
        return SamplingRule(pi.probs, budget, floor)
    if rho == 1.0:
        return SamplingRule(np.full(pi.n, r), budget, min(floor, r))
    p = pi.probs
    if kind is PathKind.LINEAR:
        return _finish((1.0 - rho) * p + rho * r, budget, floor)
    if kind is PathKind.GEOMETRIC:
        q = p ** (1.0 - rho)
        return _finish(r * q / q.mean(), budget, floor)
    return _finish(_hellinger(p, r, rho), budget, floor)


def hellinger_angle(p, rate) -> float:
    """Angle between sqrt(p) and sqrt(rate)*1, both of squared norm ``n * rate``."""
    u = np.sqrt(p)
    v = np.sqrt(rate)
    cos = (u.sum() * v) / (p.size * rate)
    return float(np.arccos(np.clip(cos, -1.0, 1.0)))


def _hellinger(p, r, rho):
    beta = hellinger_angle(p, r)
    if beta < ANGLE_TOL:
        return (1.0 - rho) * p + rho * r
    u = np.sqrt(p)
    v = np.sqrt(r)
    s = np.sin(beta)
    return ((np.sin((1.0 - rho) * beta) * u + np.sin(rho * beta) * v) / s) ** 2


def literal_hellinger_angle_argument(p, n_b) -> float:
    """``sum_i sqrt(p_i / n * n_b)``: the unnormalized arccos argument.

    Kept for comparison only; it exceeds 1 for typical rules, which is why
    :func:`hellinger_angle` normalizes by the common squared norm instead.
    """
    p = np.asarray(p, dtype=float)
    return float(np.sum(np.sqrt(p / p.size * n_b)))
