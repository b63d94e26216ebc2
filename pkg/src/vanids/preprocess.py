"""Label encoding, min-max scaling and chi-squared top-k feature selection.

All three artifacts are fit on the training split only and replayed on any
schema-matching dataset, so nothing about the test rows leaks into them.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .dataio import ColumnSchema, Dataset


@dataclass(frozen=True)
class LabelEncoder:
    """Bijective class-name <-> contiguous-index mapping."""

    classes: tuple[str, ...]

    def __post_init__(self):
        if len(set(self.classes)) != len(self.classes):
            raise ValueError("class names must be unique")
        object.__setattr__(self, "classes", tuple(self.classes))

    def encode(self, name: str) -> int:
        try:
            return self.classes.index(name)
        except ValueError:
            raise KeyError(f"unknown class name {name!r}")

    def decode(self, index: int) -> str:
        if not 0 <= index < len(self.classes):
            raise KeyError(f"class index {index} out of range")
        return self.classes[index]

    def to_dict(self) -> dict:
        return {"classes": list(self.classes)}

    @classmethod
    def from_dict(cls, d: dict) -> "LabelEncoder":
        return cls(tuple(d["classes"]))


def fit_label_encoder(class_names) -> LabelEncoder:
    return LabelEncoder(tuple(class_names))


@dataclass(frozen=True)
class MinMaxScaler:
    """Per-column affine map onto [0, 1], fit on training data.

    Constant columns map to 0. Out-of-range values seen at transform time are
    clipped back into [0, 1] by default so the chi-squared non-negativity
    precondition keeps holding downstream.
    """

    mins: np.ndarray
    maxs: np.ndarray
    feature_columns: tuple[str, ...]
    clip: bool = True

    @property
    def constant_columns(self) -> np.ndarray:
        return self.maxs == self.mins

    def to_dict(self) -> dict:
        return {
            "mins": self.mins.tolist(),
            "maxs": self.maxs.tolist(),
            "feature_columns": list(self.feature_columns),
            "clip": self.clip,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MinMaxScaler":
        return cls(
            mins=np.asarray(d["mins"], dtype=np.float64),
            maxs=np.asarray(d["maxs"], dtype=np.float64),
            feature_columns=tuple(d["feature_columns"]),
            clip=bool(d["clip"]),
        )


def fit_scaler(train: Dataset, clip: bool = True) -> MinMaxScaler:
    if train.n == 0:
        raise ValueError("cannot fit a scaler on an empty dataset")
    if not train.is_clean():
        raise ValueError("scaler input still contains NaN/Inf; clean it first")
    return MinMaxScaler(
        mins=train.rows.min(axis=0),
        maxs=train.rows.max(axis=0),
        feature_columns=train.schema.feature_columns,
        clip=clip,
    )


def _check_schema(expected: tuple[str, ...], schema: ColumnSchema):
    if schema.feature_columns != expected:
        raise ValueError(
            f"schema mismatch: fitted on {expected}, got {schema.feature_columns}"
        )


def transform(scaler: MinMaxScaler, d: Dataset) -> Dataset:
    """x' = (x - min) / (max - min) per column; labels untouched."""
    _check_schema(scaler.feature_columns, d.schema)
    rows = transform_matrix(scaler, d.rows)
    return replace(d, rows=rows)


def transform_matrix(scaler: MinMaxScaler, rows: np.ndarray) -> np.ndarray:
    span = scaler.maxs - scaler.mins
    safe = np.where(span == 0, 1.0, span)
    out = (rows - scaler.mins) / safe
    out[:, scaler.constant_columns] = 0.0
    if scaler.clip:
        out = np.clip(out, 0.0, 1.0)
    return out


def inverse_transform(scaler: MinMaxScaler, rows: np.ndarray) -> np.ndarray:
    """Undo the affine map; constant columns come back as their fitted min."""
    return rows * (scaler.maxs - scaler.mins) + scaler.mins


def chi2_scores(train: Dataset) -> np.ndarray:
    """Chi-squared association between each non-negative feature and the labels.

    Per feature, the observed statistic for class c is the feature's sum over
    class-c rows; the expected one is the feature total weighted by the class
    frequency. Classes with zero expectation contribute nothing.
    """
    X, y = train.rows, train.labels
    if X.size and X.min() < 0:
        raise ValueError("chi-squared scores need non-negative features; scale first")
    n = X.shape[0]
    if n == 0:
        raise ValueError("cannot score an empty dataset")
    n_classes = train.n_classes
    observed = np.zeros((n_classes, X.shape[1]))
    np.add.at(observed, y, X)
    class_prop = np.bincount(y, minlength=n_classes) / n
    expected = class_prop[:, None] * X.sum(axis=0)[None, :]
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(expected > 0, (observed - expected) ** 2 / expected, 0.0)
    return terms.sum(axis=0)


@dataclass(frozen=True)
class Chi2Selector:
    """Top-k chi-squared column subset, replayable on matching datasets."""

    scores: np.ndarray
    selected_indices: tuple[int, ...]
    feature_columns: tuple[str, ...]

    def selected_columns(self) -> tuple[str, ...]:
        return tuple(self.feature_columns[i] for i in self.selected_indices)

    def to_dict(self) -> dict:
        return {
            "scores": self.scores.tolist(),
            "selected_indices": list(self.selected_indices),
            "feature_columns": list(self.feature_columns),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Chi2Selector":
        return cls(
            scores=np.asarray(d["scores"], dtype=np.float64),
            selected_indices=tuple(d["selected_indices"]),
            feature_columns=tuple(d["feature_columns"]),
        )


def select_k_best(train: Dataset, k: int) -> Chi2Selector:
    """Keep the k highest-scoring features; ties go to the lower column index.

    Selected indices are stored in ascending column order, so k = d is an
    identity selection. k > d selects everything.
    """
    if k < 1:
        raise ValueError("k must be at least 1")
    scores = chi2_scores(train)
    d = scores.size
    k = min(k, d)
    ranked = sorted(range(d), key=lambda j: (-scores[j], j))
    chosen = tuple(sorted(ranked[:k]))
    return Chi2Selector(
        scores=scores, selected_indices=chosen, feature_columns=train.schema.feature_columns
    )


def apply_selector(selector: Chi2Selector, d: Dataset) -> Dataset:
    _check_schema(selector.feature_columns, d.schema)
    idx = list(selector.selected_indices)
    kept = [d.schema.feature_columns[i] for i in idx]
    schema = ColumnSchema(
        feature_columns=tuple(kept),
        label_column=d.schema.label_column,
        column_kinds={c: d.schema.column_kinds[c] for c in kept},
    )
    return Dataset(rows=d.rows[:, idx], labels=d.labels, schema=schema, class_names=d.class_names)


def select_matrix(selector: Chi2Selector, rows: np.ndarray) -> np.ndarray:
    return rows[:, list(selector.selected_indices)]
