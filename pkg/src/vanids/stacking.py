"""Stacked ensemble: forest + boosted base learners, logistic meta-learner.

The meta-learner trains on out-of-fold base probabilities, so the prediction
for every training row comes from base models that never saw that row. After
the OOF pass both base learners are refit on the full training split for
inference. Meta-feature columns are model-major: all forest class columns
first, then all boosted ones, class index ascending within each block.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import boosted as boosted_mod
from . import linear, trees
from .boosted import BoostConfig, BoostedModel
from .dataio import Cleaner, Dataset, apply_cleaner
from .linear import LogisticModel, SolveConfig
from .preprocess import (
    Chi2Selector,
    LabelEncoder,
    MinMaxScaler,
    select_matrix,
    transform_matrix,
)
from .trees import Forest, ForestConfig


@dataclass(frozen=True)
class StackConfig:
    cv_folds: int = 3
    stack_method: str = "predict_proba"
    passthrough: bool = False
    forest: ForestConfig = field(default_factory=ForestConfig)
    boost: BoostConfig = field(default_factory=BoostConfig)
    meta: SolveConfig = field(default_factory=SolveConfig)
    use_forest: bool = True
    use_boosted: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.cv_folds < 2:
            raise ValueError("cv_folds must be at least 2")
        if self.stack_method != "predict_proba":
            raise ValueError("only probability stacking is supported")
        if self.passthrough:
            raise ValueError("passthrough is fixed to False")
        if not (self.use_forest or self.use_boosted):
            raise ValueError("at least one base learner must be enabled")

    def to_dict(self) -> dict:
        return {
            "cv_folds": self.cv_folds,
            "stack_method": self.stack_method,
            "passthrough": self.passthrough,
            "forest": self.forest.to_dict(),
            "boost": self.boost.to_dict(),
            "meta": self.meta.to_dict(),
            "use_forest": self.use_forest,
            "use_boosted": self.use_boosted,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "StackConfig":
        d = dict(d)
        d["forest"] = ForestConfig.from_dict(d["forest"])
        d["boost"] = BoostConfig.from_dict(d["boost"])
        d["meta"] = SolveConfig.from_dict(d["meta"])
        return cls(**d)


@dataclass(frozen=True)
class PreprocessArtifacts:
    """Fitted preprocessing replayed inside predict, in application order."""

    cleaner: Cleaner | None = None
    encoder: LabelEncoder | None = None
    scaler: MinMaxScaler | None = None
    selector: Chi2Selector | None = None

    def apply_rows(self, rows: np.ndarray) -> np.ndarray:
        rows = np.atleast_2d(np.asarray(rows, dtype=np.float64))
        if self.cleaner is not None:
            bad = ~np.isfinite(rows)
            if bad.any():
                fill = (
                    self.cleaner.fill_values
                    if self.cleaner.policy != "zero"
                    else np.zeros(rows.shape[1])
                )
                rows = rows.copy()
                rows[bad] = np.broadcast_to(fill, rows.shape)[bad]
        if self.scaler is not None:
            rows = transform_matrix(self.scaler, rows)
        if self.selector is not None:
            rows = select_matrix(self.selector, rows)
        return rows

    def to_dict(self) -> dict:
        return {
            "cleaner": self.cleaner.to_dict() if self.cleaner else None,
            "encoder": self.encoder.to_dict() if self.encoder else None,
            "scaler": self.scaler.to_dict() if self.scaler else None,
            "selector": self.selector.to_dict() if self.selector else None,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PreprocessArtifacts":
        return cls(
            cleaner=Cleaner.from_dict(d["cleaner"]) if d.get("cleaner") else None,
            encoder=LabelEncoder.from_dict(d["encoder"]) if d.get("encoder") else None,
            scaler=MinMaxScaler.from_dict(d["scaler"]) if d.get("scaler") else None,
            selector=Chi2Selector.from_dict(d["selector"]) if d.get("selector") else None,
        )


def derive_seed(*parts: int) -> int:
    """Stable child seed from a tuple of integers."""
    return int(np.random.SeedSequence(list(parts)).generate_state(1)[0])


def stratified_folds(labels: np.ndarray, cv_folds: int, seed: int) -> np.ndarray:
    """Deterministic stratified fold ids, one per row.

    Rows of each class are shuffled and dealt round-robin, so per-class fold
    sizes differ by at most one. Every present class needs >= cv_folds rows.
    """
    labels = np.asarray(labels)
    fold_of = np.empty(labels.shape[0], dtype=np.int64)
    rng = np.random.default_rng(seed)
    for c in np.unique(labels):
        idx = np.flatnonzero(labels == c)
        if idx.size < cv_folds:
            raise ValueError(
                f"class {c} has {idx.size} rows, fewer than cv_folds={cv_folds}"
            )
        idx = idx[rng.permutation(idx.size)]
        fold_of[idx] = np.arange(idx.size) % cv_folds
    return fold_of


def _fit_bases(train: Dataset, config: StackConfig, forest_seed: int, boost_seed: int):
    forest = boosted = None
    if config.use_forest:
        forest = trees.fit_forest(train, replace(config.forest, seed=forest_seed))
    if config.use_boosted:
        boosted = boosted_mod.fit_boosted(train, replace(config.boost, seed=boost_seed))
    return forest, boosted


def _base_probas(forest, boosted, rows: np.ndarray) -> np.ndarray:
    blocks = []
    if forest is not None:
        blocks.append(trees.predict_proba(forest, rows))
    if boosted is not None:
        blocks.append(boosted_mod.predict_proba(boosted, rows))
    return np.hstack(blocks)


def oof_meta_features(
    train: Dataset, config: StackConfig, fold_indices: np.ndarray | None = None
) -> np.ndarray:
    """Out-of-fold base probabilities, (n, n_bases * n_classes).

    Row i's entries come only from base models whose training folds exclude
    row i. Pass fold_indices to pin the fold assignment externally.
    """
    if fold_indices is None:
        fold_indices = stratified_folds(train.labels, config.cv_folds, config.seed)
    n_bases = int(config.use_forest) + int(config.use_boosted)
    meta = np.zeros((train.n, n_bases * train.n_classes))
    for f in range(config.cv_folds):
        hold = np.flatnonzero(fold_indices == f)
        rest = np.flatnonzero(fold_indices != f)
        if hold.size == 0:
            continue
        sub = train.take(rest)
        forest, boost = _fit_bases(
            sub,
            config,
            forest_seed=derive_seed(config.seed, f, 0),
            boost_seed=derive_seed(config.seed, f, 1),
        )
        meta[hold] = _base_probas(forest, boost, train.rows[hold])
    return meta


@dataclass
class StackedModel:
    forest: Forest | None
    boosted: BoostedModel | None
    meta: LogisticModel
    artifacts: PreprocessArtifacts
    class_names: tuple[str, ...]
    config: StackConfig

    @property
    def n_classes(self) -> int:
        return len(self.class_names)

    def to_dict(self) -> dict:
        return {
            "forest": self.forest.to_dict() if self.forest else None,
            "boosted": self.boosted.to_dict() if self.boosted else None,
            "meta": self.meta.to_dict(),
            "artifacts": self.artifacts.to_dict(),
            "class_names": list(self.class_names),
            "config": self.config.to_dict(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "StackedModel":
        return cls(
            forest=Forest.from_dict(d["forest"]) if d.get("forest") else None,
            boosted=BoostedModel.from_dict(d["boosted"]) if d.get("boosted") else None,
            meta=LogisticModel.from_dict(d["meta"]),
            artifacts=PreprocessArtifacts.from_dict(d["artifacts"]),
            class_names=tuple(d["class_names"]),
            config=StackConfig.from_dict(d["config"]),
        )


def fit_stack(
    train: Dataset,
    config: StackConfig,
    artifacts: PreprocessArtifacts | None = None,
    fold_indices: np.ndarray | None = None,
) -> StackedModel:
    """Fit the full stack on an already-preprocessed training dataset.

    The meta-learner trains on OOF base probabilities; both base learners are
    then refit on the complete training split for inference. Preprocessing
    artifacts, when given, are embedded so predict can take raw rows.
    """
    if not train.is_clean():
        raise ValueError("stacking input still contains NaN/Inf; clean it first")
    meta_X = oof_meta_features(train, config, fold_indices)
    meta = linear.fit_logistic(meta_X, train.labels, config.meta)
    forest, boost = _fit_bases(
        train,
        config,
        forest_seed=config.forest.seed,
        boost_seed=config.boost.seed,
    )
    return StackedModel(
        forest=forest,
        boosted=boost,
        meta=meta,
        artifacts=artifacts or PreprocessArtifacts(),
        class_names=train.class_names,
        config=config,
    )


def predict_proba(model: StackedModel, raw_rows: np.ndarray) -> np.ndarray:
    """clean -> scale -> select -> base probabilities -> meta probabilities."""
    rows = model.artifacts.apply_rows(raw_rows)
    meta_X = _base_probas(model.forest, model.boosted, rows)
    return linear.predict_proba(model.meta, meta_X)


def predict(model: StackedModel, raw_rows: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Labels plus the full probability matrix; ties go to the lower class."""
    proba = predict_proba(model, raw_rows)
    return proba.argmax(axis=1), proba
