import json
import xml.etree.ElementTree as ET
from dataclasses import replace

import numpy as np
import pytest
from scipy.stats import spearmanr

from robust_ai.data import Budget, Dataset, EstimandSpec
from robust_ai.errors import ConfigError, NonpositiveVariance
from robust_ai.harness import (
    GENERATORS,
    MetricsSummary,
    coverage,
    effective_sample_size,
    emit_report,
    generate_toy_regions,
    load_config,
    perturbation_demo,
    plan_method,
    run_trials,
    summarize,
    trial_seed,
    uniform_variance_curve,
)
from robust_ai.harness.config import bundled_config, config_from_dict
from robust_ai.harness.runner import TrialRecord, trial_data
from robust_ai.paths import normalize_to_budget, path_eval
from robust_ai.robust import ConstraintSet, inner_max


def _small(**over):
    raw = {
        "dataset": {"generator": "gaussian_mean", "n": 400},
        "budgets": [80],
        "burn_in": 30,
        "initial_rule": "prop_one_minus_conf",
        "error_model": {"source": "knn"},
        "constraint": {"kind": "l2", "c": 5.0},
        "trials": 4,
        "seed": 11,
        "methods": [
            {"name": "uniform", "kind": "uniform"},
            {"name": "active", "kind": "active"},
            {"name": "robust", "kind": "robust"},
        ],
    }
    raw.update(over)
    return config_from_dict(raw)


# configuration ------------------------------------------------------------------

def test_bundled_configs_load():
    for name in ("toy_regions", "gaussian_mean"):
        cfg = load_config(bundled_config(name))
        assert cfg.trials == 500
        assert all(b <= cfg.dataset["n"] for b in cfg.budgets)


def test_json_config(tmp_path):
    p = tmp_path / "c.json"
    p.write_text(json.dumps({"dataset": {"generator": "toy_regions", "n": 100}, "budgets": [20],
                             "error_model": "external_column", "trials": 2}))
    cfg = load_config(p)
    assert [m.kind for m in cfg.methods] == ["uniform", "active", "robust"]
    assert cfg.methods[2].constraint == {"kind": "none", "c": 0.0}


@pytest.mark.parametrize("bad", [
    {"unknown_key": 1},
    {"trials": 0},
    {"budgets": []},
    {"initial_rule": "magic"},
    {"methods": [{"name": "a", "kind": "bogus"}]},
    {"constraint": {"kind": "l7"}},
    {"alpha": 1.5},
])
def test_config_errors(bad):
    with pytest.raises(ConfigError):
        _small(**bad)


def test_budget_above_n_rejected():
    cfg = _small(budgets=[500])
    with pytest.raises(ConfigError):
        run_trials(cfg)


# generators -----------------------------------------------------------------------

def test_toy_regions_layout():
    s = generate_toy_regions(20_000, 0)
    x = s.data.features[:, 0]
    assert np.all(s.region == (np.abs(x) <= 2))
    np.testing.assert_array_equal(s.data.ehat2[s.region], 0.25)
    np.testing.assert_array_equal(s.data.ehat2[~s.region], 6.25)
    assert abs(s.region.mean() - 0.4) < 0.015
    assert s.theta_star == 0.0


def test_generators_are_seeded():
    for gen in GENERATORS.values():
        a, b = gen(50, 3), gen(50, 3)
        np.testing.assert_array_equal(a.data.labels, b.data.labels)


def test_perturbation_demo_zero_radius():
    out = perturbation_demo(c=0.0)
    assert out["perturbed"] == out["ehat2"]


def test_perturbation_demo_figure_parameters():
    out = perturbation_demo()
    assert out["closer"] and out["mean_abs_gap_after"] < out["mean_abs_gap_before"]


def test_perturbation_bound_with_exact_errors(rng):
    n, c = 10, 0.3
    b = Budget(5, n)
    e = np.abs(rng.normal(5, 0.5, n))
    rule = path_eval("linear", normalize_to_budget(e, b), b, 0.5)
    _, eps = inner_max(e**2, rule, ConstraintSet("l2", c))
    w = 1 / (n * rule.probs)
    assert np.all(np.abs(eps) <= c * w.max() / np.linalg.norm(w) + 1e-15)


# planning -------------------------------------------------------------------------

def test_uniform_method_rule_is_constant():
    cfg = _small(trials=1)
    recs = run_trials(replace(cfg, methods=cfg.methods[:1]))
    assert len(recs) == 1 and recs[0].rho == 1.0
    td = trial_data(cfg, trial_seed(cfg.seed, 0))
    plan = plan_method(cfg, cfg.methods[0], td.data, Budget(80, 400), trial_seed(cfg.seed, 0))
    np.testing.assert_array_equal(plan.rule.probs, 0.2)


def test_burn_in_accounting():
    cfg = _small()
    seed = trial_seed(cfg.seed, 0)
    data = trial_data(cfg, seed).data
    budget = Budget(80, 400)
    plan = plan_method(cfg, cfg.methods[1], data, budget, seed)
    assert plan.burn_idx.size == 30
    assert abs(plan.rule.probs.mean() - 0.2) < 1e-12
    draw = plan.draw(seed, data.row_ids)
    assert draw.xi[plan.burn_idx].all()
    # at rho = 1 the two phases combine into the plain uniform rule
    huge = replace(cfg.methods[2], constraint={"kind": "l2", "c": 1e9})
    plan = plan_method(cfg, huge, data, budget, seed)
    assert plan.rho == 1.0
    np.testing.assert_allclose(plan.rule.probs, 0.2, rtol=1e-12)


def test_burn_in_equal_to_budget():
    cfg = _small(burn_in=80)
    seed = trial_seed(cfg.seed, 0)
    data = trial_data(cfg, seed).data
    plan = plan_method(cfg, cfg.methods[2], data, Budget(80, 400), seed)
    draw = plan.draw(seed, data.row_ids)
    assert draw.realized_count == 80
    np.testing.assert_allclose(plan.rule.probs, 0.2)


def test_failed_trials_are_recorded():
    recs = run_trials(_small(burn_in=90, trials=2))
    by = {r.method: r for r in recs if r.trial == 0}
    assert not by["uniform"].failed
    assert by["active"].failed and "BurnInTooLarge" in by["active"].error
    s = summarize(recs)
    assert s.cell("active", 80).failures == 2


def test_runs_are_deterministic():
    cfg = _small()
    a = [r.to_dict() for r in run_trials(cfg)]
    b = [r.to_dict() for r in run_trials(cfg)]
    assert a == b


def test_parallel_matches_sequential():
    cfg = _small(trials=3)
    a = [r.to_dict() for r in run_trials(cfg, workers=1)]
    b = [r.to_dict() for r in run_trials(cfg, workers=2)]
    assert a == b


def test_methods_share_label_uniforms():
    cfg = _small(trials=2)
    recs = run_trials(cfg)
    seeds = {(r.trial, r.seed) for r in recs}
    assert len(seeds) == 2


def test_large_radius_raises_rho_on_paired_seeds():
    base = _small(trials=6, burn_in=60, cv={"folds": 5})
    low = replace(base.methods[2], cv={"folds": 5, "c_grid": [0.0]})
    high = replace(base.methods[2], name="robust_big", cv={"folds": 5, "c_grid": [1e6]})
    recs = run_trials(replace(base, methods=(replace(low, name="robust_zero"), high)))
    s = summarize(recs)
    assert s.cell("robust_big", 80).mean_rho >= s.cell("robust_zero", 80).mean_rho


def test_rho_shrinks_with_burn_in():
    sizes = [20, 40, 80, 160, 240]
    rhos = []
    for b in sizes:
        cfg = config_from_dict({
            "dataset": {"generator": "gaussian_mean", "n": 1000}, "budgets": [300], "burn_in": b,
            "initial_rule": "prop_ehat", "error_model": {"source": "knn"},
            "constraint": {"kind": "l2", "c": 20}, "trials": 20, "seed": 3,
            "methods": [{"name": "robust", "kind": "robust"}],
        })
        rhos.append(summarize(run_trials(cfg)).cells[0].mean_rho)
    assert spearmanr(sizes, rhos).statistic <= 0


def test_csv_source_resampling(tmp_path):
    from importlib.resources import files

    src = files("robust_ai") / "datasets" / "survey_synthetic.csv"
    cfg = config_from_dict({
        "dataset": {"csv": str(src), "n": 100}, "budgets": [40], "burn_in": 10,
        "initial_rule": "prop_uncertainty", "error_model": {"source": "knn"},
        "constraint": {"kind": "l2", "c": 1.0}, "trials": 3, "seed": 0,
    })
    recs = run_trials(cfg)
    assert not any(r.failed for r in recs)
    assert len({r.theta_star for r in recs}) == 1


# metrics --------------------------------------------------------------------------

def _labeled(rng, n=200):
    f = rng.normal(size=n)
    y = f + rng.normal(scale=0.7, size=n)
    return Dataset(np.zeros((n, 1)), f, y, np.ones(n, dtype=bool))


def test_ess_inverts_curve(rng):
    d = _labeled(rng)
    A, B = uniform_variance_curve(d, EstimandSpec())
    assert effective_sample_size(A + B / 50, d) == pytest.approx(50)
    assert effective_sample_size(A + B / 100, d) == pytest.approx(100)


def test_ess_curve_regression(rng):
    n = 300
    X = rng.normal(size=(n, 1))
    f = 1 + 2 * X[:, 0]
    d = Dataset(X, f, f + rng.normal(size=n), np.ones(n, dtype=bool))
    spec = EstimandSpec("linreg", 1)
    A, B = uniform_variance_curve(d, spec)
    assert B > 0
    assert effective_sample_size(A + B / 60, d, spec) == pytest.approx(60)


def test_ess_edge_cases(rng):
    d = _labeled(rng)
    A, _ = uniform_variance_curve(d, EstimandSpec())
    with pytest.raises(NonpositiveVariance):
        effective_sample_size(0.0, d)
    if A > 0:
        assert effective_sample_size(A / 2, d) == np.inf


def _rec(lo, hi, theta=0.0, failed=False):
    return TrialRecord("m", 1, 0, 0, estimate=0.5 * (lo + hi), ci_lo=lo, ci_hi=hi, theta_star=theta, failed=failed)


def test_coverage_trivial():
    assert coverage([_rec(-1e300, 1e300)] * 5, 0.0) == (1.0, 0)
    assert coverage([_rec(1.0, 1.0)] * 5, 0.0) == (0.0, 0)
    cov, failed = coverage([_rec(-1, 1), _rec(2, 3), _rec(0, 0, failed=True)])
    assert cov == 0.5 and failed == 1


# reporting ------------------------------------------------------------------------

def test_report_requires_methods(tmp_path):
    with pytest.raises(ConfigError):
        emit_report(MetricsSummary(), tmp_path)


def test_report_files(tmp_path):
    cfg = _small(budgets=[60, 80], trials=3)
    recs = run_trials(replace(cfg, methods=cfg.methods[:1]))
    paths = emit_report(summarize(recs), tmp_path)
    lines = paths["trials"].read_text().splitlines()
    assert lines[0] == "method,budget,trial,estimate,ci_lo,ci_hi,n_labeled,rho,c"
    assert len(lines) - 1 == 2 * 3
    summary = json.loads(paths["summary"].read_text())
    assert {c["budget"] for c in summary["cells"]} == {60, 80}


def test_report_svg_structure(tmp_path):
    recs = run_trials(_small(budgets=[60, 80], trials=2))
    paths = emit_report(summarize(recs), tmp_path)
    for key in ("ess", "coverage"):
        root = ET.parse(paths[key]).getroot()
        ids = [el.get("id") for el in root.iter() if (el.get("id") or "").startswith("series-")]
        assert sorted(ids) == ["series-active", "series-robust", "series-uniform"]


def test_trials_csv_byte_identical(tmp_path):
    cfg = _small(trials=2)
    emit_report(summarize(run_trials(cfg)), tmp_path / "a")
    emit_report(summarize(run_trials(cfg)), tmp_path / "b")
    assert (tmp_path / "a" / "trials.csv").read_bytes() == (tmp_path / "b" / "trials.csv").read_bytes()
    assert (tmp_path / "a" / "ess.svg").read_bytes() == (tmp_path / "b" / "ess.svg").read_bytes()
