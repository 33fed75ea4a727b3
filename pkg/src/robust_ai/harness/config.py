"""Experiment configuration (YAML or JSON)."""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import yaml

from ..data import EstimandSpec
from ..errors import ConfigError
from ..paths import DEFAULT_FLOOR, PathKind
from ..robust import CONSTRAINT_KINDS, OTHER, OVERCONFIDENT

METHOD_KINDS = ("uniform", "active", "robust")
INITIAL_RULES = ("uniform", "prop_uncertainty", "prop_ehat", "prop_one_minus_conf")
ERROR_SOURCES = ("knn", "binned", "external_column", "binary")
_REGION_NAMES = {"overconfident": OVERCONFIDENT, "other": OTHER}


def _constraint(raw):
    if raw is None:
        return None
    if not isinstance(raw, dict) or "kind" not in raw:
        raise ConfigError("constraint must be a mapping with a 'kind'")
    out = dict(raw)
    out["kind"] = str(out["kind"]).lower().replace("-", "_")
    if out["kind"] not in CONSTRAINT_KINDS:
        raise ConfigError(f"unknown constraint kind {raw['kind']!r}")
    if out["kind"] == "structured":
        radii = out.get("c_per_region", {"overconfident": out.get("c", 0.0), "other": 0.0})
        out["c_per_region"] = {
            _REGION_NAMES.get(k, k) if isinstance(k, str) else int(k): float(v) for k, v in radii.items()
        }
        for k in out["c_per_region"]:
            if k not in (OVERCONFIDENT, OTHER):
                raise ConfigError(f"unknown region {k!r}")
        out.setdefault("c", out["c_per_region"].get(OVERCONFIDENT, 0.0))
        out.setdefault("depth", 2)
        out.setdefault("pilot_size", 1000)
    out["c"] = float(out.get("c", 0.0))
    return out


def _cv(raw):
    if raw is None or raw is False:
        return None
    if raw is True:
        raw = {}
    if not isinstance(raw, dict):
        raise ConfigError("cv must be a mapping")
    out = {"folds": int(raw.get("folds", 5)), "c_grid": raw.get("c_grid")}
    if out["folds"] < 2:
        raise ConfigError("cv folds must be at least 2")
    return out


@dataclass(frozen=True)
class MethodSpec:
    name: str
    kind: str
    constraint: dict | None = None
    cv: dict | None = None
    path: PathKind | None = None
    rho_step: float | None = None

    def __post_init__(self):
        if self.kind not in METHOD_KINDS:
            raise ConfigError(f"unknown method kind {self.kind!r}")


@dataclass(frozen=True)
class ExperimentConfig:
    dataset: dict
    estimand: EstimandSpec = field(default_factory=EstimandSpec)
    budgets: tuple = ()
    burn_in: int = 0
    initial_rule: str = "prop_ehat"
    error_model: dict = field(default_factory=lambda: {"source": "knn"})
    path: PathKind = PathKind.GEOMETRIC
    constraint: dict | None = None
    cv: dict | None = None
    trials: int = 500
    rho_step: float = 0.01
    seed: int = 0
    alpha: float = 0.1
    floor: float = DEFAULT_FLOOR
    theta_star: str = "population"
    methods: tuple = ()
    base_dir: Path | None = None

    def __post_init__(self):
        if self.trials < 1:
            raise ConfigError("trials must be at least 1")
        if not self.budgets:
            raise ConfigError("at least one budget is required")
        if self.initial_rule not in INITIAL_RULES:
            raise ConfigError(f"unknown initial rule {self.initial_rule!r}")
        if self.error_model.get("source") not in ERROR_SOURCES:
            raise ConfigError(f"unknown error source {self.error_model.get('source')!r}")
        if not 0 < self.alpha < 1:
            raise ConfigError("alpha must lie in (0, 1)")
        if self.theta_star not in ("population", "full_data"):
            raise ConfigError("theta_star must be 'population' or 'full_data'")
        ds = self.dataset
        if ("generator" in ds) == ("csv" in ds):
            raise ConfigError("dataset needs exactly one of 'generator' or 'csv'")
        if "generator" in ds and "n" not in ds:
            raise ConfigError("generator datasets need 'n'")
        if not self.methods:
            object.__setattr__(self, "methods", (
                MethodSpec("uniform", "uniform"),
                MethodSpec("active", "active"),
                MethodSpec("robust", "robust"),
            ))
        resolved = []
        for m in self.methods:
            if m.kind == "robust":
                m = replace(
                    m,
                    constraint=m.constraint if m.constraint is not None else self.constraint,
                    cv=m.cv if m.cv is not None else self.cv,
                )
                if m.constraint is None:
                    m = replace(m, constraint={"kind": "none", "c": 0.0})
            resolved.append(replace(m, path=m.path or self.path, rho_step=m.rho_step or self.rho_step))
        names = [m.name for m in resolved]
        if len(set(names)) != len(names):
            raise ConfigError("method names must be unique")
        object.__setattr__(self, "methods", tuple(resolved))

    def csv_path(self) -> Path:
        p = Path(self.dataset["csv"])
        if not p.is_absolute() and self.base_dir is not None:
            p = self.base_dir / p
        return p


_KEYS = {
    "dataset", "estimand", "budgets", "burn_in", "initial_rule", "error_model", "path",
    "constraint", "cv", "trials", "rho_step", "seed", "alpha", "floor", "theta_star", "methods",
}


def config_from_dict(raw: dict, base_dir=None) -> ExperimentConfig:
    if not isinstance(raw, dict):
        raise ConfigError("config must be a mapping")
    unknown = set(raw) - _KEYS
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    if "dataset" not in raw:
        raise ConfigError("config needs a 'dataset'")
    try:
        est = raw.get("estimand", {})
        if isinstance(est, str):
            est = {"kind": est}
        burn = raw.get("burn_in", 0)
        if isinstance(burn, dict):
            burn = burn.get("size", 0)
        err = raw.get("error_model", {"source": "knn"})
        if isinstance(err, str):
            err = {"source": err}
        methods = []
        for m in raw.get("methods", []) or []:
            if isinstance(m, str):
                m = {"name": m, "kind": m}
            methods.append(MethodSpec(
                name=str(m["name"]),
                kind=str(m.get("kind", m["name"])),
                constraint=_constraint(m.get("constraint")),
                cv=_cv(m.get("cv")),
                path=PathKind.parse(m["path"]) if "path" in m else None,
                rho_step=float(m["rho_step"]) if "rho_step" in m else None,
            ))
        budgets = raw.get("budgets", [])
        if isinstance(budgets, int):
            budgets = [budgets]
        return ExperimentConfig(
            dataset=dict(raw["dataset"]),
            estimand=EstimandSpec(**est),
            budgets=tuple(int(b) for b in budgets),
            burn_in=int(burn),
            initial_rule=str(raw.get("initial_rule", "prop_ehat")),
            error_model=dict(err),
            path=PathKind.parse(raw.get("path", "geometric")),
            constraint=_constraint(raw.get("constraint")),
            cv=_cv(raw.get("cv")),
            trials=int(raw.get("trials", 500)),
            rho_step=float(raw.get("rho_step", 0.01)),
            seed=int(raw.get("seed", 0)),
            alpha=float(raw.get("alpha", 0.1)),
            floor=float(raw.get("floor", DEFAULT_FLOOR)),
            theta_star=str(raw.get("theta_star", "population")),
            methods=tuple(methods),
            base_dir=None if base_dir is None else Path(base_dir),
        )
    except (KeyError, TypeError) as exc:
        raise ConfigError(f"malformed config: {exc}") from None


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"no such config: {path}")
    text = path.read_text()
    try:
        raw = json.loads(text) if path.suffix == ".json" else yaml.safe_load(text)
    except (json.JSONDecodeError, yaml.YAMLError) as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from None
    return config_from_dict(raw, base_dir=path.parent)


def bundled_config(name: str) -> Path:
    """Path of a config shipped with the package (``toy_regions``, ``gaussian_mean``)."""
    p = Path(__file__).resolve().parent.parent / "configs" / f"{name}.yaml"
    if not p.exists():
        raise ConfigError(f"no bundled config named {name!r}")
    return p
