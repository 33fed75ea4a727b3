"""Datasets, budgets, estimand specifications and CSV ingestion."""

from __future__ import annotations

import csv
import fnmatch
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ._io import atomic_open
from .errors import (
    BurnInTooLarge,
    ConfigError,
    DataError,
    EmptyDataset,
    MissingColumn,
    ParseError,
)

ESTIMAND_KINDS = ("mean", "linear_regression", "logistic_regression")
_ESTIMAND_ALIASES = {"linreg": "linear_regression", "logreg": "logistic_regression"}

DEFAULT_SCHEMA = {
    "features": "x*",
    "prediction": "f",
    "label": "y",
    "confidence": "conf",
    "ehat2": "ehat2",
    "row_id": "row_id",
}
# columns that can never be features even if they match the feature glob
_RESERVED = {"xi"}


def _frozen(a, dtype=float):
    a = np.array(a, dtype=dtype)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Dataset:
    """Covariates, black-box predictions and (partially observed) labels.

    Missing labels are stored as NaN; ``observed`` is the source of truth for
    which labels exist.
    """

    features: np.ndarray
    predictions: np.ndarray
    labels: np.ndarray
    observed: np.ndarray
    confidence: np.ndarray | None = None
    ehat2: np.ndarray | None = None
    row_ids: np.ndarray | None = None
    feature_names: tuple[str, ...] = ()

    def __post_init__(self):
        preds = _frozen(self.predictions).reshape(-1)
        n = preds.shape[0]
        if n < 1:
            raise EmptyDataset("dataset has no rows")
        feats = np.asarray(self.features, dtype=float)
        if feats.ndim == 1:
            feats = feats.reshape(n, -1) if feats.size else np.zeros((n, 0))
        feats = _frozen(feats)
        labels = _frozen(self.labels).reshape(-1)
        observed = _frozen(self.observed, dtype=bool).reshape(-1)
        if feats.shape[0] != n or labels.shape[0] != n or observed.shape[0] != n:
            raise DataError("features, predictions, labels and mask must have equal length")
        if not np.all(np.isfinite(preds)):
            raise DataError("predictions must be finite")
        if np.any(~np.isfinite(labels[observed])):
            raise DataError("observed labels must be finite")
        object.__setattr__(self, "features", feats)
        object.__setattr__(self, "predictions", preds)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "observed", observed)
        if self.confidence is not None:
            conf = _frozen(self.confidence).reshape(-1)
            if conf.shape[0] != n:
                raise DataError("confidence must have length n")
            if np.any((conf < 0) | (conf > 1)) or not np.all(np.isfinite(conf)):
                raise DataError("confidence values must lie in [0, 1]")
            object.__setattr__(self, "confidence", conf)
        if self.ehat2 is not None:
            eh = _frozen(self.ehat2).reshape(-1)
            if eh.shape[0] != n or not np.all(np.isfinite(eh)):
                raise DataError("ehat2 must be a finite length-n vector")
            object.__setattr__(self, "ehat2", eh)
        ids = np.arange(n) if self.row_ids is None else self.row_ids
        ids = _frozen(ids, dtype=np.int64).reshape(-1)
        if ids.shape[0] != n:
            raise DataError("row_ids must have length n")
        object.__setattr__(self, "row_ids", ids)
        if not self.feature_names:
            names = tuple(f"x{j + 1}" for j in range(feats.shape[1]))
            object.__setattr__(self, "feature_names", names)

    @property
    def n(self) -> int:
        return self.predictions.shape[0]

    @property
    def d(self) -> int:
        return self.features.shape[1]

    @property
    def fully_labeled(self) -> bool:
        return bool(self.observed.all())

    def residuals_sq(self) -> np.ndarray:
        """(Y - f)^2, NaN where the label is missing."""
        return (self.labels - self.predictions) ** 2

    def subset(self, idx) -> Dataset:
        idx = np.asarray(idx)
        return Dataset(
            features=self.features[idx],
            predictions=self.predictions[idx],
            labels=self.labels[idx],
            observed=self.observed[idx],
            confidence=None if self.confidence is None else self.confidence[idx],
            ehat2=None if self.ehat2 is None else self.ehat2[idx],
            row_ids=self.row_ids[idx],
            feature_names=self.feature_names,
        )

    def with_observed(self, observed) -> Dataset:
        """Copy with a new mask; labels outside the mask are dropped."""
        observed = np.asarray(observed, dtype=bool)
        labels = np.where(observed, self.labels, np.nan)
        return Dataset(
            features=self.features,
            predictions=self.predictions,
            labels=labels,
            observed=observed,
            confidence=self.confidence,
            ehat2=self.ehat2,
            row_ids=self.row_ids,
            feature_names=self.feature_names,
        )

    def check_estimand(self, spec: EstimandSpec) -> None:
        lab = self.labels[self.observed]
        binary = lab.size > 0 and np.all((lab == 0) | (lab == 1))
        in_unit = np.all((self.predictions >= 0) & (self.predictions <= 1))
        if spec.kind == "logistic_regression" and not (binary and in_unit):
            raise DataError("logistic regression needs binary labels and predictions in [0, 1]")
        if spec.kind == "mean" and binary and lab.size > 1 and not in_unit:
            raise DataError("binary labels require predictions in [0, 1]")
        p = self.d + int(spec.include_intercept)
        if spec.kind != "mean" and not 0 <= spec.coordinate_j < p:
            raise ConfigError(f"coordinate_j={spec.coordinate_j} out of range for {p} columns")


@dataclass(frozen=True)
class Budget:
    n_b: int
    n: int

    def __post_init__(self):
        if int(self.n_b) != self.n_b or int(self.n) != self.n:
            raise ConfigError("budget and n must be integers")
        if not 1 <= self.n_b <= self.n:
            raise ConfigError(f"need 1 <= n_b <= n, got n_b={self.n_b}, n={self.n}")

    @property
    def rate(self) -> float:
        return self.n_b / self.n


@dataclass(frozen=True)
class EstimandSpec:
    kind: str = "mean"
    coordinate_j: int = 0
    include_intercept: bool = True

    def __post_init__(self):
        kind = _ESTIMAND_ALIASES.get(self.kind, self.kind)
        if kind not in ESTIMAND_KINDS:
            raise ConfigError(f"unknown estimand kind {self.kind!r}")
        object.__setattr__(self, "kind", kind)
        if self.coordinate_j < 0:
            raise ConfigError("coordinate_j must be nonnegative")

    def design(self, features) -> np.ndarray:
        """Regression design matrix; the intercept, if any, is column 0."""
        features = np.asarray(features, dtype=float)
        if self.kind == "mean":
            return np.ones((features.shape[0], 1))
        if self.include_intercept:
            return np.column_stack([np.ones(features.shape[0]), features])
        return features

    def coordinate(self) -> int:
        return 0 if self.kind == "mean" else self.coordinate_j


@dataclass(frozen=True)
class BurnInPlan:
    size: int = 0
    seed: int = 0

    def __post_init__(self):
        if self.size < 0:
            raise ConfigError("burn-in size must be nonnegative")

    def check(self, budget: Budget) -> None:
        if self.size > budget.n_b:
            raise BurnInTooLarge(f"burn-in {self.size} exceeds budget {budget.n_b}")


def split_burn_in(data: Dataset, plan: BurnInPlan):
    """Uniform draw without replacement of ``plan.size`` burn-in units.

    Returns sorted ``(burn_in, remainder)`` index arrays partitioning ``range(n)``.
    """
    n = data.n
    if plan.size > n:
        raise BurnInTooLarge(f"burn-in size {plan.size} exceeds n={n}")
    rng = np.random.default_rng(plan.seed)
    chosen = np.zeros(n, dtype=bool)
    chosen[rng.choice(n, size=plan.size, replace=False)] = True
    return np.flatnonzero(chosen), np.flatnonzero(~chosen)


def _resolve_schema(header, schema):
    s = dict(DEFAULT_SCHEMA)
    if schema:
        s.update(schema)
    feats = s["features"]
    if isinstance(feats, str):
        feats = [h for h in header if fnmatch.fnmatchcase(h, feats) and h not in _RESERVED]
    else:
        feats = list(feats)
        for col in feats:
            if col not in header:
                raise MissingColumn(col)
    for key in ("prediction", "label"):
        if s[key] not in header:
            raise MissingColumn(s[key])
    return s, feats


def _parse(value, row, col):
    try:
        return float(value)
    except ValueError:
        raise ParseError(row, col, value) from None


def load_csv(path, schema=None) -> Dataset:
    """Read a dataset from a headed CSV file.

    ``schema`` maps roles (features, prediction, label, confidence, ehat2,
    row_id) to column names; ``features`` may be a glob or a list. Blank label
    cells mark unobserved labels. Optional columns are used when present.
    """
    path = Path(path)
    if not path.exists():
        raise DataError(f"no such file: {path}")
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise EmptyDataset(f"{path} is empty") from None
        rows = [r for r in reader if r and any(c.strip() for c in r)]
    if not rows:
        raise EmptyDataset(f"{path} has no data rows")
    s, feats = _resolve_schema(header, schema)
    pos = {h: k for k, h in enumerate(header)}

    def column(name, allow_blank=False):
        out = np.empty(len(rows))
        k = pos[name]
        for i, r in enumerate(rows):
            cell = r[k].strip() if k < len(r) else ""
            if cell == "":
                if not allow_blank:
                    raise ParseError(i + 1, name, cell)
                out[i] = np.nan
            else:
                out[i] = _parse(cell, i + 1, name)
        return out

    X = np.column_stack([column(c) for c in feats]) if feats else np.zeros((len(rows), 0))
    labels = column(s["label"], allow_blank=True)
    optional = {}
    for role in ("confidence", "ehat2", "row_id"):
        name = s.get(role)
        if name and name in pos:
            optional[role] = column(name)
    ehat2 = optional.get("ehat2")
    if ehat2 is not None:
        ehat2 = np.maximum(ehat2, 0.0)
    row_ids = optional.get("row_id")
    if row_ids is not None:
        if np.any(row_ids != np.round(row_ids)):
            raise DataError("row_id must be integral")
        if np.unique(row_ids).size != row_ids.size:
            raise DataError("row_id values must be unique")
    return Dataset(
        features=X,
        predictions=column(s["prediction"]),
        labels=labels,
        observed=~np.isnan(labels),
        confidence=optional.get("confidence"),
        ehat2=ehat2,
        row_ids=row_ids,
        feature_names=tuple(feats),
    )


def write_csv(data: Dataset, path) -> None:
    """Write ``data`` in the default schema; floats use round-trip repr."""
    header = ["row_id", *data.feature_names, "f", "y"]
    if data.confidence is not None:
        header.append("conf")
    if data.ehat2 is not None:
        header.append("ehat2")
    with atomic_open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for i in range(data.n):
            row = [str(int(data.row_ids[i]))]
            row += [repr(float(v)) for v in data.features[i]]
            row.append(repr(float(data.predictions[i])))
            row.append(repr(float(data.labels[i])) if data.observed[i] else "")
            if data.confidence is not None:
                row.append(repr(float(data.confidence[i])))
            if data.ehat2 is not None:
                row.append(repr(float(data.ehat2[i])))
            w.writerow(row)
