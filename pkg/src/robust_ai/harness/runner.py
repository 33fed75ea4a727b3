"""Per-trial planning, label draws and estimation.

One trial regenerates (or resamples) the data, draws a shared burn-in, and
then runs every (budget, method) cell on the same per-unit uniforms, so
method comparisons are paired.
"""

from __future__ import annotations

import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass

import numpy as np

from ..data import Budget, BurnInPlan, Dataset, EstimandSpec, load_csv, split_burn_in
from ..errors import ConfigError, DataError, EmptyBurnIn, RobustAIError
from ..error_model import (
    ErrorEstimate,
    binary_error,
    default_k,
    estimate_hessian_inverse_column,
    external_error,
    fit_binned_error,
    fit_knn_error,
    glm_error_transform,
    pilot_theta,
)
from ..estimation import estimate_m
from ..paths import SamplingRule, normalize_to_budget, path_eval
from ..robust import ConstraintSet, RhoGrid, cross_validate_c, learn_regions, solve_rho
from ..sampler import LabelDraw, counter_uniforms
from .config import ExperimentConfig, MethodSpec
from .generators import GENERATORS
from .metrics import uniform_variance_curve

# purpose tags for seeds derived from a trial seed
_DATA, _BURN, _PILOT, _CV = 1, 2, 3, 4


def trial_seed(base_seed: int, t: int) -> int:
    """64-bit seed for trial ``t``; depends only on ``(base_seed, t)``."""
    return int(np.random.SeedSequence([int(base_seed), int(t)]).generate_state(1, np.uint64)[0])


def derived_seed(seed: int, purpose: int) -> int:
    return int(np.random.SeedSequence([int(seed), int(purpose)]).generate_state(1, np.uint64)[0])


@dataclass(frozen=True, eq=False)
class MethodPlan:
    """Everything needed to draw labels and estimate for one method.

    ``rule`` holds each unit's marginal inclusion probability (the weight the
    estimator uses); ``phase2`` is the post-burn-in rule compared against the
    per-unit uniform. Burn-in units are always labeled.
    """

    rule: SamplingRule
    phase2: np.ndarray
    burn_idx: np.ndarray
    rho: float
    c: float
    ehat2: np.ndarray | None = None
    cv_scores: dict | None = None

    def draw(self, seed: int, row_ids) -> LabelDraw:
        u = counter_uniforms(seed, row_ids)
        xi = u < self.phase2
        xi[self.burn_idx] = True
        return LabelDraw(xi, seed)


def _initial_weights(recipe: str, data: Dataset, ehat2: np.ndarray) -> np.ndarray:
    if recipe == "uniform":
        return np.ones(data.n)
    if recipe == "prop_ehat":
        return np.sqrt(ehat2)
    if recipe == "prop_uncertainty":
        f = data.predictions
        if np.any((f < 0) | (f > 1)):
            raise DataError("prop_uncertainty needs predictions in [0, 1]")
        return np.minimum(f, 1.0 - f)
    if data.confidence is None:
        raise DataError("prop_one_minus_conf needs a confidence column")
    return 1.0 - data.confidence


class _ErrorFitter:
    """Fits the (GLM-transformed) error function from chosen burn-in rows."""

    def __init__(self, cfg: ExperimentConfig, data: Dataset, burn_idx: np.ndarray):
        self.cfg, self.data, self.burn_idx = cfg, data, burn_idx
        spec = cfg.estimand
        self.transform = None
        if spec.kind != "mean":
            labeled = burn_idx if burn_idx.size else None
            pilot = pilot_theta(spec, data, labeled)
            self.transform = (spec.design(data.features), estimate_hessian_inverse_column(spec, data, pilot))
        r2 = data.residuals_sq()
        self.r2_burn = r2[burn_idx]

    def scale(self, idx=None) -> np.ndarray:
        """Per-unit factor ``(x'h)^2`` (ones for the mean)."""
        if self.transform is None:
            return np.ones(self.data.n if idx is None else len(idx))
        X, h = self.transform
        s = (X @ h.h) ** 2
        return s if idx is None else s[idx]

    def __call__(self, positions=None) -> ErrorEstimate:
        em = self.cfg.error_model
        src = em["source"]
        data = self.data
        pos = np.arange(self.burn_idx.size) if positions is None else np.asarray(positions)
        rows = self.burn_idx[pos]
        if src == "external_column":
            if data.ehat2 is None:
                raise DataError("error source external_column needs an ehat2 column")
            base = external_error(data.ehat2)
        elif src == "binary":
            base = binary_error(data.predictions)
        elif rows.size == 0:
            raise EmptyBurnIn(f"error source {src} needs burn-in labels")
        elif src == "knn":
            k = em.get("k") or default_k(rows.size)
            base = fit_knn_error(data.features[rows], self.r2_burn[pos], min(int(k), rows.size), data.features)
        else:
            if data.confidence is None:
                raise DataError("error source binned needs a confidence column")
            base = fit_binned_error(data.confidence[rows], self.r2_burn[pos], int(em.get("bins", 10)),
                                    data.confidence)
        if self.transform is None:
            return base
        X, h = self.transform
        return glm_error_transform(base, X, h)


def _constraint_set(method: MethodSpec, data: Dataset, burn_idx, ehat2, r2_burn, pilot: Dataset | None):
    raw = method.constraint
    kind = raw["kind"]
    if kind != "structured":
        return ConstraintSet(kind, raw["c"])
    depth = int(raw.get("depth", 2))
    if burn_idx.size:
        labels = learn_regions(data.features[burn_idx], r2_burn, ehat2[burn_idx], depth=depth,
                               query=data.features)
    elif pilot is not None:
        if pilot.ehat2 is None:
            raise DataError("region pilot needs an ehat2 column")
        labels = learn_regions(pilot.features, pilot.residuals_sq(), pilot.ehat2, depth=depth,
                               query=data.features)
    else:
        raise EmptyBurnIn("structured constraint needs burn-in labels or a region pilot")
    return ConstraintSet("structured", raw["c"], labels, raw["c_per_region"])


def plan_method(cfg: ExperimentConfig, method: MethodSpec, data: Dataset, budget: Budget,
                seed: int, burn_idx=None, pilot: Dataset | None = None) -> MethodPlan:
    """Sampling plan of one method for one trial.

    ``seed`` is the trial seed. ``burn_idx`` overrides the random burn-in
    draw (used when the burn-in labels already exist in a file).
    """
    n = data.n
    if budget.n != n:
        raise ConfigError(f"budget is for n={budget.n} but the data has {n} rows")
    if method.kind == "uniform":
        rate = np.full(n, budget.rate)
        return MethodPlan(SamplingRule(rate, budget, min(cfg.floor, budget.rate)), rate,
                          np.zeros(0, dtype=int), 1.0, 0.0)
    if burn_idx is None:
        plan = BurnInPlan(cfg.burn_in, derived_seed(seed, _BURN))
        plan.check(budget)
        burn_idx, _ = split_burn_in(data, plan)
    burn_idx = np.asarray(burn_idx, dtype=int)
    b = burn_idx.size
    BurnInPlan(b).check(budget)
    fitter = _ErrorFitter(cfg, data, burn_idx)
    ehat2 = fitter().values
    if b == budget.n_b:
        phase2 = np.zeros(n)
        full = np.full(n, b / n)
        return MethodPlan(SamplingRule(full, budget, min(cfg.floor, b / n)), phase2, burn_idx, 0.0, 0.0, ehat2)
    rest = Budget(budget.n_b - b, n - b)

    def initial(e):
        e = e.values if isinstance(e, ErrorEstimate) else e
        return normalize_to_budget(_initial_weights(cfg.initial_rule, data, e), rest, cfg.floor)

    pi = initial(ehat2)
    rho, c, cv_scores = 0.0, 0.0, None
    if method.kind == "robust":
        cset = _constraint_set(method, data, burn_idx, ehat2, fitter.r2_burn, pilot)
        c = cset.c
        grid = RhoGrid(method.rho_step)
        if method.cv is not None:
            targets = fitter.r2_burn * fitter.scale(burn_idx)
            res = cross_validate_c(burn_idx, targets, fitter, initial, method.path, rest, cset,
                                   c_grid=method.cv.get("c_grid"), folds=method.cv["folds"], grid=grid,
                                   seed=derived_seed(seed, _CV))
            c = res.c_star
            cv_scores = {"candidates": res.candidates.tolist(), "scores": res.scores.tolist()}
        rho, _ = solve_rho(method.path, pi, rest, ehat2, cset.with_radius(c), grid)
        phase2 = path_eval(method.path, pi, rest, rho).probs
    else:
        phase2 = pi.probs
    full = b / n + (1.0 - b / n) * phase2
    rule = SamplingRule(full, budget, min(cfg.floor, float(full.min())))
    return MethodPlan(rule, np.array(phase2), burn_idx, float(rho), float(c), ehat2, cv_scores)


@dataclass
class TrialRecord:
    method: str
    budget: int
    trial: int
    seed: int
    estimate: float = float("nan")
    ci_lo: float = float("nan")
    ci_hi: float = float("nan")
    sigma2_hat: float = float("nan")
    n_labeled: int = 0
    rho: float = float("nan")
    c: float = float("nan")
    theta_star: float = float("nan")
    A: float = float("nan")
    B: float = float("nan")
    n: int = 0
    failed: bool = False
    error: str = ""

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True, eq=False)
class TrialData:
    data: Dataset
    theta_star: float
    pilot: Dataset | None = None


def _full_data_theta(spec: EstimandSpec, data: Dataset) -> float:
    return float(pilot_theta(spec, data, np.arange(data.n))[spec.coordinate()])


def _source_dataset(cfg: ExperimentConfig) -> Dataset:
    data = load_csv(cfg.csv_path(), cfg.dataset.get("schema"))
    if not data.fully_labeled:
        raise DataError("simulation needs a fully labeled dataset")
    return data


def _region_pilot_size(cfg: ExperimentConfig) -> int:
    sizes = [int(m.constraint.get("pilot_size", 1000)) for m in cfg.methods
             if m.kind == "robust" and m.constraint["kind"] == "structured"]
    return max(sizes) if sizes and cfg.burn_in == 0 else 0


def trial_data(cfg: ExperimentConfig, seed: int, source: Dataset | None = None) -> TrialData:
    """Dataset, target and optional region pilot for one trial."""
    spec = cfg.estimand
    ds = cfg.dataset
    pilot = None
    if "generator" in ds:
        gen = GENERATORS.get(ds["generator"])
        if gen is None:
            raise ConfigError(f"unknown generator {ds['generator']!r}")
        synth = gen(int(ds["n"]), derived_seed(seed, _DATA))
        data = synth.data
        if cfg.theta_star == "population":
            if spec.kind != "mean":
                raise ConfigError("generators only know the population mean; use theta_star: full_data")
            theta = synth.theta_star
        else:
            theta = _full_data_theta(spec, data)
        m = _region_pilot_size(cfg)
        if m:
            pilot = gen(m, derived_seed(seed, _PILOT)).data
        return TrialData(data, float(theta), pilot)
    source = _source_dataset(cfg) if source is None else source
    if ds.get("resample", True):
        n = int(ds.get("n", source.n))
        idx = np.random.default_rng(derived_seed(seed, _DATA)).integers(0, source.n, n)
        d = source.subset(idx)
        data = Dataset(d.features, d.predictions, d.labels, d.observed, d.confidence, d.ehat2,
                       np.arange(n), d.feature_names)
        theta = _full_data_theta(spec, source if cfg.theta_star == "population" else data)
    else:
        data = source
        theta = _full_data_theta(spec, data)
    return TrialData(data, float(theta), pilot)


def run_trial(cfg: ExperimentConfig, t: int, source: Dataset | None = None) -> list[TrialRecord]:
    seed = trial_seed(cfg.seed, t)
    td = trial_data(cfg, seed, source)
    data = td.data
    data.check_estimand(cfg.estimand)
    A, B = uniform_variance_curve(data, cfg.estimand)
    out = []
    for n_b in cfg.budgets:
        budget = Budget(n_b, data.n)
        for method in cfg.methods:
            rec = TrialRecord(method.name, n_b, t, seed, theta_star=td.theta_star, A=A, B=B, n=data.n)
            try:
                plan = plan_method(cfg, method, data, budget, seed, pilot=td.pilot)
                draw = plan.draw(seed, data.row_ids)
                res = estimate_m(cfg.estimand, data, draw, plan.rule, cfg.alpha)
            except (RobustAIError, np.linalg.LinAlgError) as exc:
                rec.failed, rec.error = True, f"{type(exc).__name__}: {exc}"
            else:
                rec.estimate, rec.sigma2_hat = res.estimate, res.sigma2_hat
                rec.ci_lo, rec.ci_hi = res.ci
                rec.n_labeled, rec.rho, rec.c = res.n_labeled, plan.rho, plan.c
            out.append(rec)
    return out


def _run_chunk(args):
    cfg, ts = args
    source = None if "generator" in cfg.dataset else _source_dataset(cfg)
    return [r for t in ts for r in run_trial(cfg, t, source)]


def worker_count() -> int:
    raw = os.environ.get("ROBUST_AI_THREADS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        raise ConfigError(f"ROBUST_AI_THREADS must be an integer, got {raw!r}") from None


def run_trials(cfg: ExperimentConfig, workers: int | None = None) -> list[TrialRecord]:
    """All trials, ordered by (trial, budget, method); identical for any worker count."""
    for n_b in cfg.budgets:
        n = cfg.dataset.get("n")
        if n is not None and n_b > int(n):
            raise ConfigError(f"budget {n_b} exceeds n={n}")
    workers = worker_count() if workers is None else workers
    trials = list(range(cfg.trials))
    if workers <= 1 or cfg.trials == 1:
        return _run_chunk((cfg, trials))
    chunks = [(cfg, trials[i::workers]) for i in range(workers)]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        parts = list(pool.map(_run_chunk, chunks))
    records = [r for part in parts for r in part]
    order = {(m.name): k for k, m in enumerate(cfg.methods)}
    records.sort(key=lambda r: (r.trial, cfg.budgets.index(r.budget), order[r.method]))
    return records
