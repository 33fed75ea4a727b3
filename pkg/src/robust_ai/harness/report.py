"""Writing summaries, per-trial tables and line charts."""

from __future__ import annotations

import csv
import math
from pathlib import Path

import matplotlib
import numpy as np

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .._io import atomic_open, write_json  # noqa: E402
from ..errors import ConfigError  # noqa: E402
from .metrics import MetricsSummary  # noqa: E402

TRIAL_COLUMNS = ("method", "budget", "trial", "estimate", "ci_lo", "ci_hi", "n_labeled", "rho", "c")


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def write_trials_csv(records, path) -> None:
    with atomic_open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TRIAL_COLUMNS)
        for r in records:
            w.writerow([_fmt(getattr(r, k)) for k in TRIAL_COLUMNS])


def _json_safe(obj):
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    if isinstance(obj, dict):
        return {k: _json_safe(v) for k, v in obj.items()}
    if isinstance(obj, list):
        return [_json_safe(v) for v in obj]
    return obj


def _chart(summary: MetricsSummary, metric: str, spread, ylabel: str, path) -> None:
    plt.rcParams["svg.hashsalt"] = "robust-ai"
    fig, ax = plt.subplots(figsize=(6, 4))
    budgets = summary.budgets
    for method in summary.methods:
        cells = [summary.cell(method, b) for b in budgets]
        y = [getattr(c, metric) for c in cells]
        s = [spread(c) for c in cells]
        (line,) = ax.plot(budgets, y, marker="o", label=method)
        line.set_gid(f"series-{method}")
        band = ax.fill_between(budgets, [a - d for a, d in zip(y, s)], [a + d for a, d in zip(y, s)],
                               alpha=0.2, color=line.get_color())
        band.set_gid(f"band-{method}")
    ax.set_xlabel("budget")
    ax.set_ylabel(ylabel)
    ax.legend()
    fig.tight_layout()
    with atomic_open(path, "wb") as fh:
        fig.savefig(fh, format="svg", metadata={"Date": None})
    plt.close(fig)


def _coverage_sd(cell):
    ok = cell.trials - cell.failures
    if ok <= 0 or not math.isfinite(cell.coverage):
        return 0.0
    return math.sqrt(cell.coverage * (1 - cell.coverage) / ok)


def emit_report(summary: MetricsSummary, out_dir, figures: bool = True, extra: dict | None = None) -> dict:
    """Write ``summary.json``, ``trials.csv`` and optionally ``ess.svg`` / ``coverage.svg``.

    Returns a mapping from artifact name to path.
    """
    if not summary.cells:
        raise ConfigError("nothing to report: the summary has no methods")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {"summary": out / "summary.json", "trials": out / "trials.csv"}
    body = summary.to_dict()
    if extra:
        body.update(extra)
    write_json(paths["summary"], _json_safe(body))
    write_trials_csv(summary.records, paths["trials"])
    if figures:
        paths["ess"] = out / "ess.svg"
        paths["coverage"] = out / "coverage.svg"
        _chart(summary, "n_eff", lambda c: c.n_eff_sd if math.isfinite(c.n_eff_sd) else 0.0,
               "effective sample size", paths["ess"])
        _chart(summary, "coverage", _coverage_sd, "coverage", paths["coverage"])
    return paths
