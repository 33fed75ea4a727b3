"""Label-collection draws with per-unit counter-based randomness."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .data import Budget
from .errors import ConfigError
from .paths import SamplingRule

_MASK = (1 << 64) - 1
_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)

# stream tags keep unrelated uses of one seed apart
STREAM_LABELS = 0x4C4142454C


def _splitmix(z):
    z = z + _GOLDEN
    z = (z ^ (z >> np.uint64(30))) * _M1
    z = (z ^ (z >> np.uint64(27))) * _M2
    return z ^ (z >> np.uint64(31))


def counter_uniforms(seed: int, ids, stream: int = STREAM_LABELS) -> np.ndarray:
    """Uniforms on [0, 1) where entry ``k`` depends only on ``(seed, stream, ids[k])``.

    Two rounds of the splitmix64 finalizer over the key and the unit id.
    """
    ids = np.asarray(ids).astype(np.uint64).reshape(-1)
    key = _splitmix(np.array([(int(seed) ^ (int(stream) * 0x2545F4914F6CDD1D)) & _MASK], dtype=np.uint64))
    z = _splitmix(key + _splitmix(ids))
    return (z >> np.uint64(11)).astype(np.float64) * (1.0 / (1 << 53))


@dataclass(frozen=True, eq=False)
class LabelDraw:
    xi: np.ndarray
    seed: int

    def __post_init__(self):
        xi = np.array(self.xi, dtype=bool).reshape(-1)
        xi.setflags(write=False)
        object.__setattr__(self, "xi", xi)

    @property
    def realized_count(self) -> int:
        return int(self.xi.sum())


def draw_labels(rule: SamplingRule, seed: int, ids=None) -> LabelDraw:
    """Independent ``Bernoulli(pi_i)`` indicators keyed by ``(seed, id_i)``."""
    ids = np.arange(rule.n) if ids is None else ids
    u = counter_uniforms(seed, ids)
    return LabelDraw(u < rule.probs, seed)


def hoeffding_min_n(epsilon: float, delta: float) -> float:
    return math.log(1.0 / delta) / (2.0 * epsilon**2)


def budget_audit(draw: LabelDraw, budget: Budget, epsilon: float = 0.05, delta: float = 0.05) -> dict:
    """Compare the realized labeling rate with the budget and the Hoeffding size condition."""
    if not (0 < epsilon < 1 and 0 < delta < 1):
        raise ConfigError("epsilon and delta must lie in (0, 1)")
    n = draw.xi.shape[0]
    rate = draw.realized_count / n
    threshold = hoeffding_min_n(epsilon, delta)
    return {
        "n": n,
        "realized_count": draw.realized_count,
        "realized_rate": rate,
        "target_rate": budget.rate,
        "epsilon": epsilon,
        "delta": delta,
        "hoeffding_min_n": threshold,
        "n_sufficient": n > threshold,
        "flagged": rate > budget.rate + epsilon,
    }
