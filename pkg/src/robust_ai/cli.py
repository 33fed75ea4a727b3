"""Command-line front end: plan, estimate, tune, simulate, report."""

from __future__ import annotations

import argparse
import csv
import json
import sys
from fractions import Fraction
from pathlib import Path

import numpy as np

from ._io import atomic_open, write_json
from .data import Budget, Dataset, EstimandSpec, load_csv
from .errors import ConfigError, DataError, MissingLabelAtSampledUnit, NumericError, RobustAIError
from .estimation import estimate_m
from .paths import PathKind, SamplingRule
from .sampler import LabelDraw

EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC, EXIT_MISSING = 2, 3, 4, 5


def _cli_config(args, data: Dataset, constraint: dict | None, cv: dict | None):
    from .harness.config import ExperimentConfig, MethodSpec

    source = args.error_source or ("external_column" if data.ehat2 is not None else "knn")
    method = MethodSpec("plan", "robust", constraint=constraint or {"kind": "none", "c": 0.0}, cv=cv)
    return ExperimentConfig(
        dataset={"csv": str(args.data), "resample": False},
        estimand=EstimandSpec(args.estimand, args.coord),
        budgets=(args.budget,),
        burn_in=args.burn_in,
        initial_rule=args.initial_rule,
        error_model={"source": source, "k": args.k, "bins": args.bins},
        path=PathKind.parse(args.path),
        trials=1,
        rho_step=args.rho_step,
        seed=args.seed,
        methods=(method,),
    )


def _burn_rows(data: Dataset):
    """Existing labels act as the burn-in when the file is partially labeled."""
    if data.fully_labeled:
        return None
    return np.flatnonzero(data.observed)


def _constraint_arg(args):
    kind = args.constraint.replace("-", "_")
    if kind == "structured":
        return {"kind": kind, "c": args.c, "c_per_region": {1: args.c, 0: 0.0}, "depth": 2}
    return {"kind": kind, "c": args.c}


def _plan(args, cv=None):
    from .harness.runner import plan_method, trial_seed

    data = load_csv(args.data)
    if args.budget > data.n:
        raise ConfigError(f"budget {args.budget} exceeds n={data.n}")
    cfg = _cli_config(args, data, _constraint_arg(args), cv)
    seed_t = trial_seed(args.seed, 0)
    plan = plan_method(cfg, cfg.methods[0], data, Budget(args.budget, data.n), seed_t, burn_idx=_burn_rows(data))
    return data, cfg, plan, seed_t


def cmd_plan(args) -> int:
    cv = {"folds": args.folds, "c_grid": args.c_grid} if args.cv else None
    data, cfg, plan, seed_t = _plan(args, cv)
    draw = plan.draw(seed_t, data.row_ids)
    out = Path(args.out)
    with atomic_open(out, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["row_id", "pi", "xi"])
        for rid, p, x in zip(data.row_ids, plan.rule.probs, draw.xi):
            w.writerow([int(rid), repr(float(p)), int(x)])
    sidecar = {
        "rho": plan.rho,
        "c": plan.c,
        "path": cfg.path.value,
        "seed": args.seed,
        "trial_seed": seed_t,
        "budget": args.budget,
        "burn_in": int(plan.burn_idx.size),
        "n": data.n,
        "n_sampled": draw.realized_count,
    }
    if plan.cv_scores is not None:
        sidecar["cv"] = plan.cv_scores
    write_json(out.with_suffix(".json"), sidecar)
    print(json.dumps(sidecar))
    return 0


def read_plan(path, data: Dataset):
    """Probabilities and indicators from a plan CSV, aligned to ``data.row_ids``."""
    rows = {}
    try:
        with open(path, newline="") as fh:
            for k, rec in enumerate(csv.DictReader(fh), start=2):
                rows[int(rec["row_id"])] = (float(rec["pi"]), rec["xi"].strip() == "1")
    except (KeyError, ValueError) as exc:
        raise DataError(f"malformed plan file {path}: {exc}") from None
    missing = [int(r) for r in data.row_ids if int(r) not in rows]
    if missing:
        raise DataError(f"plan has no entry for row_ids {missing[:10]}")
    pi = np.array([rows[int(r)][0] for r in data.row_ids])
    xi = np.array([rows[int(r)][1] for r in data.row_ids])
    return pi, xi


def _plan_budget(pi) -> Budget:
    """A budget whose rate is the plan's mean probability (hand-written plans allowed)."""
    if pi.size == 0 or not np.all((pi > 0) & (pi <= 1)):
        raise DataError("plan probabilities must lie in (0, 1]")
    rate = Fraction(float(pi.mean())).limit_denominator(10**9)
    if abs(float(rate) - pi.mean()) > 1e-9:
        raise DataError("cannot recover the plan's labeling rate")
    return Budget(rate.numerator, rate.denominator)


def cmd_estimate(args) -> int:
    data = load_csv(args.data)
    pi, xi = read_plan(args.plan, data)
    rule = SamplingRule(pi, _plan_budget(pi), min(1e-3, float(pi.min())))
    spec = EstimandSpec(args.estimand, args.coord)
    res = estimate_m(spec, data, LabelDraw(xi, 0), rule, args.alpha)
    body = res.to_dict()
    if args.out:
        write_json(args.out, body)
    print(json.dumps(body))
    return 0


def cmd_tune(args) -> int:
    grid = args.c_grid if args.c_grid else None
    _, _, plan, _ = _plan(args, {"folds": args.folds, "c_grid": grid})
    body = {"c_star": plan.c, "rho": plan.rho, **plan.cv_scores}
    print(json.dumps(body))
    return 0


def cmd_simulate(args) -> int:
    from dataclasses import replace

    from .harness import emit_report, load_config, run_trials, summarize
    from .harness.config import bundled_config

    path = Path(args.config)
    if not path.exists() and not path.suffix:
        path = bundled_config(args.config)
    cfg = load_config(path)
    if args.trials is not None:
        cfg = replace(cfg, trials=args.trials)
    records = run_trials(cfg)
    summary = summarize(records)
    out = Path(args.out)
    emit_report(summary, out, figures=not args.no_figures)
    with atomic_open(out / "records.jsonl", "w") as fh:
        for r in records:
            fh.write(json.dumps(r.to_dict()) + "\n")
    for c in summary.cells:
        print(f"{c.method}\tbudget={c.budget}\tn_eff={c.n_eff:.1f}\tcoverage={c.coverage:.3f}\trho={c.mean_rho:.3f}")
    return 0


def cmd_report(args) -> int:
    from .harness import emit_report, summarize
    from .harness.runner import TrialRecord

    src = Path(args.input)
    src = src / "records.jsonl" if src.is_dir() else src
    if not src.exists():
        raise DataError(f"no records at {src}")
    with open(src) as fh:
        records = [TrialRecord(**json.loads(line)) for line in fh if line.strip()]
    emit_report(summarize(records), args.out, figures=not args.no_figures)
    return 0


def _planning_flags(p, need_out=True):
    p.add_argument("--data", required=True, type=Path)
    p.add_argument("--budget", required=True, type=int)
    p.add_argument("--burn-in", type=int, default=0)
    p.add_argument("--path", choices=[k.value for k in PathKind], default="geometric")
    p.add_argument("--constraint", choices=["none", "l2", "l1", "rel-l1", "rel-l2", "structured"], default="l2")
    p.add_argument("--c", type=float, default=0.0)
    p.add_argument("--rho-step", type=float, default=0.01)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--initial-rule", default="prop_ehat",
                   choices=["uniform", "prop_uncertainty", "prop_ehat", "prop_one_minus_conf"])
    p.add_argument("--error-source", choices=["knn", "binned", "external_column", "binary"])
    p.add_argument("--k", type=int)
    p.add_argument("--bins", type=int, default=10)
    p.add_argument("--estimand", default="mean")
    p.add_argument("--coord", type=int, default=0)
    p.add_argument("--folds", type=int, default=5)
    p.add_argument("--c-grid", type=float, nargs="+")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="robust-ai", description=__doc__)
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("plan", help="compute a sampling plan and draw labeling decisions")
    _planning_flags(p)
    p.add_argument("--cv", action="store_true", help="choose c by cross-validation on the burn-in")
    p.add_argument("--out", required=True, type=Path)
    p.set_defaults(func=cmd_plan)

    p = sub.add_parser("estimate", help="estimate from a plan and the collected labels")
    p.add_argument("--data", required=True, type=Path)
    p.add_argument("--plan", required=True, type=Path)
    p.add_argument("--estimand", default="mean")
    p.add_argument("--coord", type=int, default=0)
    p.add_argument("--alpha", type=float, default=0.1)
    p.add_argument("--out", type=Path)
    p.set_defaults(func=cmd_estimate)

    p = sub.add_parser("tune", help="cross-validate the constraint radius c")
    _planning_flags(p)
    p.set_defaults(func=cmd_tune)

    p = sub.add_parser("simulate", help="run a repeated-trial experiment")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True, type=Path)
    p.add_argument("--trials", type=int)
    p.add_argument("--no-figures", action="store_true")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("report", help="re-render a report from saved trial records")
    p.add_argument("--input", required=True, type=Path)
    p.add_argument("--out", required=True, type=Path)
    p.add_argument("--no-figures", action="store_true")
    p.set_defaults(func=cmd_report)
    return ap


def exit_code(exc: BaseException) -> int:
    if isinstance(exc, MissingLabelAtSampledUnit):
        return EXIT_MISSING
    if isinstance(exc, ConfigError):
        return EXIT_CONFIG
    if isinstance(exc, (DataError, OSError)):
        return EXIT_DATA
    if isinstance(exc, NumericError):
        return EXIT_NUMERIC
    return 1


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (RobustAIError, OSError) as exc:
        code = exit_code(exc)
        msg = f"error: {type(exc).__name__}: {exc}"
        if isinstance(exc, MissingLabelAtSampledUnit):
            msg += "\nrow_ids: " + " ".join(str(int(r)) for r in exc.rows)
        print(msg, file=sys.stderr)
        return code


if __name__ == "__main__":
    sys.exit(main())
