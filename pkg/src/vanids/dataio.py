"""Ingestion, cleaning, relabeling and splitting of vehicular message logs.

The unit of data everywhere in this package is :class:`Dataset`: a float64
feature matrix, an integer label vector, a column schema and an ordered
class-name table. Categorical columns (sender, messageID) are carried as
non-negative numeric codes inside the matrix.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
import pandas as pd

BENIGN = "BENIGN"

NUMERIC = "numeric"
CATEGORICAL = "categorical"

# Canonical flattening of a VeReMi-style message log. Other flattenings are
# ingested via the rename map of load_csv.
CANONICAL_FEATURES = (
    "rcvTime",
    "sendTime",
    "sender",
    "messageID",
    "pos-x1",
    "pos-y1",
    "pos-z1",
    "spd-x1",
    "spd-y1",
    "spd-z1",
)
CANONICAL_CATEGORICAL = ("sender", "messageID")
LABEL_COLUMN = "attackerType"

CLEAN_POLICIES = ("median", "zero", "drop_row")


@dataclass(frozen=True)
class ColumnSchema:
    """Ordered feature columns, the label column, and per-column kinds."""

    feature_columns: tuple[str, ...]
    label_column: str
    column_kinds: dict[str, str] = field(default_factory=dict)

    def __post_init__(self):
        cols = self.feature_columns
        if not cols:
            raise ValueError("schema needs at least one feature column")
        if len(set(cols)) != len(cols):
            raise ValueError("duplicate feature columns in schema")
        if self.label_column in cols:
            raise ValueError(f"label column {self.label_column!r} listed among features")
        kinds = dict(self.column_kinds)
        for c in cols:
            kinds.setdefault(c, NUMERIC)
        unknown = {k: v for k, v in kinds.items() if v not in (NUMERIC, CATEGORICAL)}
        if unknown:
            raise ValueError(f"unknown column kinds: {unknown}")
        object.__setattr__(self, "feature_columns", tuple(cols))
        object.__setattr__(self, "column_kinds", kinds)

    @property
    def n_features(self) -> int:
        return len(self.feature_columns)

    def kind_of(self, column: str) -> str:
        return self.column_kinds[column]

    def categorical_indices(self) -> tuple[int, ...]:
        return tuple(
            i for i, c in enumerate(self.feature_columns) if self.column_kinds[c] == CATEGORICAL
        )

    def index_of(self, column: str) -> int:
        return self.feature_columns.index(column)

    def to_dict(self) -> dict:
        return {
            "feature_columns": list(self.feature_columns),
            "label_column": self.label_column,
            "column_kinds": dict(self.column_kinds),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ColumnSchema":
        return cls(
            feature_columns=tuple(d["feature_columns"]),
            label_column=d["label_column"],
            column_kinds=dict(d["column_kinds"]),
        )


def canonical_schema() -> ColumnSchema:
    kinds = {c: CATEGORICAL if c in CANONICAL_CATEGORICAL else NUMERIC for c in CANONICAL_FEATURES}
    return ColumnSchema(CANONICAL_FEATURES, LABEL_COLUMN, kinds)


@dataclass(frozen=True)
class AttackCodeMap:
    """Maps raw attacker-type codes in the label column to class names."""

    codes: dict[int, str]

    def __post_init__(self):
        names = list(self.codes.values())
        if len(set(names)) != len(names):
            raise ValueError("attack class names must be unique")
        if BENIGN not in names:
            raise ValueError(f"{BENIGN} class missing from the code map")
        object.__setattr__(self, "codes", dict(self.codes))

    def class_names(self) -> tuple[str, ...]:
        """BENIGN first, then remaining classes by ascending code."""
        benign_code = next(c for c, n in self.codes.items() if n == BENIGN)
        rest = sorted(c for c in self.codes if c != benign_code)
        return (BENIGN,) + tuple(self.codes[c] for c in rest)

    def label_of(self, code: int) -> int:
        return self.class_names().index(self.codes[code])

    def code_of(self, name: str) -> int:
        for code, n in self.codes.items():
            if n == name:
                return code
        raise KeyError(name)

    def to_dict(self) -> dict:
        return {str(k): v for k, v in self.codes.items()}

    @classmethod
    def from_dict(cls, d: dict) -> "AttackCodeMap":
        return cls({int(k): v for k, v in d.items()})


def default_attack_codes() -> AttackCodeMap:
    return AttackCodeMap(
        {
            0: BENIGN,
            1: "Constant Attack",
            2: "Constant Offset Attack",
            4: "Random Attack",
            8: "Random Offset Attack",
            16: "Eventual Stop Attack",
        }
    )


@dataclass(frozen=True)
class Dataset:
    """Immutable feature matrix + labels + schema + class-name table."""

    rows: np.ndarray
    labels: np.ndarray
    schema: ColumnSchema
    class_names: tuple[str, ...]

    def __post_init__(self):
        rows = np.ascontiguousarray(np.asarray(self.rows, dtype=np.float64))
        labels = np.ascontiguousarray(np.asarray(self.labels, dtype=np.int64))
        if rows.ndim != 2:
            raise ValueError("rows must be a 2-D matrix")
        if labels.ndim != 1 or labels.shape[0] != rows.shape[0]:
            raise ValueError("labels must be one per row")
        if rows.shape[1] != self.schema.n_features:
            raise ValueError(
                f"matrix has {rows.shape[1]} columns, schema names {self.schema.n_features}"
            )
        if len(set(self.class_names)) != len(self.class_names):
            raise ValueError("class names must be unique")
        if labels.size and (labels.min() < 0 or labels.max() >= len(self.class_names)):
            raise ValueError("labels out of range for class_names")
        rows.setflags(write=False)
        labels.setflags(write=False)
        object.__setattr__(self, "rows", rows)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "class_names", tuple(self.class_names))

    @property
    def n(self) -> int:
        return self.rows.shape[0]

    @property
    def n_features(self) -> int:
        return self.rows.shape[1]

    @property
    def n_classes(self) -> int:
        return len(self.class_names)

    def class_counts(self) -> dict[str, int]:
        counts = np.bincount(self.labels, minlength=self.n_classes)
        return {name: int(c) for name, c in zip(self.class_names, counts)}

    def column(self, name: str) -> np.ndarray:
        return self.rows[:, self.schema.index_of(name)]

    def is_clean(self) -> bool:
        return bool(np.isfinite(self.rows).all())

    def take(self, indices: np.ndarray) -> "Dataset":
        return replace(self, rows=self.rows[indices], labels=self.labels[indices])


def _read_one_csv(path: Path, columns: list[str], label_column: str, rename: dict[str, str]):
    try:
        df = pd.read_csv(path)
    except FileNotFoundError:
        raise FileNotFoundError(f"input file not found: {path}")
    if rename:
        df = df.rename(columns=rename)
    missing = [c for c in columns + [label_column] if c not in df.columns]
    if missing:
        raise ValueError(f"{path}: header is missing schema column(s) {missing}")
    feats = df[columns].apply(pd.to_numeric, errors="coerce").to_numpy(dtype=np.float64)
    raw_labels = pd.to_numeric(df[label_column], errors="coerce").to_numpy()
    return feats, raw_labels


def load_csv(
    paths,
    schema: ColumnSchema | None = None,
    codes: AttackCodeMap | None = None,
    rename: dict[str, str] | None = None,
) -> Dataset:
    """Concatenate one or more message-log CSVs into a Dataset.

    Rows keep file order. Empty cells and the tokens nan/inf/-inf (any case)
    come through as NaN/infinity and are resolved later by :func:`clean`.
    Unknown attacker-type codes are reported with their file and 1-based data
    row number.
    """
    schema = schema or canonical_schema()
    codes = codes or default_attack_codes()
    rename = rename or {}
    class_names = codes.class_names()
    code_to_label = {code: class_names.index(name) for code, name in codes.codes.items()}

    blocks, label_blocks = [], []
    for p in [Path(p) for p in paths]:
        feats, raw = _read_one_csv(p, list(schema.feature_columns), schema.label_column, rename)
        labels = np.empty(len(raw), dtype=np.int64)
        for i, code in enumerate(raw):
            if not np.isfinite(code) or int(code) != code or int(code) not in code_to_label:
                raise ValueError(
                    f"{p}: unknown {schema.label_column} code {code!r} at data row {i + 1}"
                )
            labels[i] = code_to_label[int(code)]
        blocks.append(feats)
        label_blocks.append(labels)

    if blocks:
        rows = np.vstack(blocks)
        labels = np.concatenate(label_blocks)
    else:
        rows = np.empty((0, schema.n_features))
        labels = np.empty(0, dtype=np.int64)
    return Dataset(rows=rows, labels=labels, schema=schema, class_names=class_names)


@dataclass(frozen=True)
class Cleaner:
    """Fitted missing/infinite-value policy, replayable on new rows.

    fill_values hold the per-column substitutes recorded at fit time
    (training medians for the median policy). At inference drop_row falls
    back to median fills so predictions stay row-aligned with their input.
    """

    policy: str
    fill_values: np.ndarray

    def to_dict(self) -> dict:
        return {"policy": self.policy, "fill_values": self.fill_values.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "Cleaner":
        return cls(d["policy"], np.asarray(d["fill_values"], dtype=np.float64))


def fit_cleaner(d: Dataset, policy: str = "median") -> Cleaner:
    if policy not in CLEAN_POLICIES:
        raise ValueError(f"unknown cleaning policy {policy!r}; pick one of {CLEAN_POLICIES}")
    fills = np.zeros(d.n_features)
    if policy in ("median", "drop_row"):
        for j in range(d.n_features):
            col = d.rows[:, j]
            finite = col[np.isfinite(col)]
            if finite.size == 0:
                if policy == "median":
                    name = d.schema.feature_columns[j]
                    raise ValueError(f"column {name!r} has no finite values to take a median of")
                fills[j] = 0.0
            else:
                fills[j] = float(np.median(finite))
    return Cleaner(policy=policy, fill_values=fills)


def apply_cleaner(cleaner: Cleaner, d: Dataset, drop: bool | None = None) -> Dataset:
    """Apply a fitted cleaner. drop=False forces substitution (inference path)."""
    bad = ~np.isfinite(d.rows)
    if not bad.any():
        return d
    if drop is None:
        drop = cleaner.policy == "drop_row"
    if drop:
        keep = ~bad.any(axis=1)
        return d.take(np.flatnonzero(keep))
    rows = d.rows.copy()
    fill = cleaner.fill_values if cleaner.policy != "zero" else np.zeros(d.n_features)
    rows[bad] = np.broadcast_to(fill, rows.shape)[bad]
    return replace(d, rows=rows)


def clean(d: Dataset, policy: str = "median") -> Dataset:
    """Resolve NaN/±Inf cells; idempotent for every policy."""
    return apply_cleaner(fit_cleaner(d, policy), d)


def binarize(d: Dataset) -> Dataset:
    """Collapse every non-BENIGN class into a single ATTACK class."""
    if BENIGN not in d.class_names:
        raise ValueError(f"dataset has no {BENIGN} class to binarize against")
    if d.class_names == (BENIGN, "ATTACK"):
        return d
    benign_idx = d.class_names.index(BENIGN)
    labels = (d.labels != benign_idx).astype(np.int64)
    return replace(d, labels=labels, class_names=(BENIGN, "ATTACK"))


def isolate_attack(d: Dataset, attack: str) -> Dataset:
    """Keep only BENIGN rows plus the rows of one attack class."""
    if attack not in d.class_names:
        raise ValueError(f"unknown attack class {attack!r}; dataset has {d.class_names}")
    if attack == BENIGN:
        raise ValueError("cannot isolate the BENIGN class against itself")
    if BENIGN not in d.class_names:
        raise ValueError(f"dataset has no {BENIGN} class")
    benign_idx = d.class_names.index(BENIGN)
    attack_idx = d.class_names.index(attack)
    keep = (d.labels == benign_idx) | (d.labels == attack_idx)
    labels = (d.labels[keep] == attack_idx).astype(np.int64)
    return Dataset(
        rows=d.rows[keep],
        labels=labels,
        schema=d.schema,
        class_names=(BENIGN, attack),
    )


@dataclass(frozen=True)
class SplitPair:
    train: Dataset
    test: Dataset
    seed: int
    ratio: float


def stratified_split(d: Dataset, ratio: float, seed: int) -> SplitPair:
    """Deterministic stratified train/test split.

    Per class, round(ratio * n_class) rows go to train (clamped so neither
    side is empty), which keeps both sides within one row of the exact
    stratified ideal.
    """
    if not 0.0 < ratio < 1.0:
        raise ValueError("split ratio must lie strictly inside (0, 1)")
    counts = np.bincount(d.labels, minlength=d.n_classes)
    present = np.flatnonzero(counts)
    tiny = [d.class_names[c] for c in present if counts[c] < 2]
    if tiny:
        raise ValueError(f"classes with fewer than 2 rows cannot be split: {tiny}")

    rng = np.random.default_rng(seed)
    train_idx, test_idx = [], []
    for c in present:
        idx = np.flatnonzero(d.labels == c)
        idx = idx[rng.permutation(idx.size)]
        n_train = int(round(ratio * idx.size))
        n_train = min(max(n_train, 1), idx.size - 1)
        train_idx.append(idx[:n_train])
        test_idx.append(idx[n_train:])
    train_idx = np.sort(np.concatenate(train_idx))
    test_idx = np.sort(np.concatenate(test_idx))
    return SplitPair(train=d.take(train_idx), test=d.take(test_idx), seed=seed, ratio=ratio)


def build_manifest(
    d: Dataset, cleaning_policy: str | None = None, seed: int | None = None, **extra
) -> dict:
    manifest = {
        "schema": d.schema.to_dict(),
        "class_names": list(d.class_names),
        "class_counts": d.class_counts(),
        "row_count": d.n,
        "cleaning_policy": cleaning_policy,
        "seed": seed,
    }
    manifest.update(extra)
    return manifest


def save_prepared(
    d: Dataset,
    out_dir,
    name: str,
    cleaning_policy: str | None = None,
    seed: int | None = None,
    **extra,
) -> tuple[Path, Path]:
    """Persist a prepared dataset as CSV (label column = class index) plus
    a side-car JSON manifest."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    csv_path = out_dir / f"{name}.csv"
    manifest_path = out_dir / f"{name}.manifest.json"

    df = pd.DataFrame(np.asarray(d.rows), columns=list(d.schema.feature_columns))
    df[d.schema.label_column] = np.asarray(d.labels)
    df.to_csv(csv_path, index=False)

    manifest = build_manifest(d, cleaning_policy=cleaning_policy, seed=seed, **extra)
    manifest_path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return csv_path, manifest_path


def read_prepared(csv_path, manifest_path) -> Dataset:
    """Load a dataset persisted by :func:`save_prepared`."""
    manifest = json.loads(Path(manifest_path).read_text())
    schema = ColumnSchema.from_dict(manifest["schema"])
    df = pd.read_csv(csv_path)
    missing = [c for c in (*schema.feature_columns, schema.label_column) if c not in df.columns]
    if missing:
        raise ValueError(f"{csv_path}: prepared file is missing column(s) {missing}")
    rows = df[list(schema.feature_columns)].to_numpy(dtype=np.float64)
    labels = df[schema.label_column].to_numpy(dtype=np.int64)
    return Dataset(
        rows=rows, labels=labels, schema=schema, class_names=tuple(manifest["class_names"])
    )


def write_canonical_csv(d: Dataset, path, codes: AttackCodeMap | None = None) -> Path:
    """Write a raw message-log CSV (label column = attacker-type code) that
    round-trips through :func:`load_csv`."""
    codes = codes or default_attack_codes()
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    name_to_code = {name: code for code, name in codes.codes.items()}
    missing = [n for n in d.class_names if n not in name_to_code]
    if missing:
        raise ValueError(f"class names without attacker-type codes: {missing}")
    label_codes = np.array([name_to_code[d.class_names[y]] for y in d.labels], dtype=np.int64)
    df = pd.DataFrame(np.asarray(d.rows), columns=list(d.schema.feature_columns))
    df[d.schema.label_column] = label_codes
    df.to_csv(path, index=False)
    return path
