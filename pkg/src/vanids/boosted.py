"""Gradient-boosted oblivious trees with ordered target statistics.

Categorical columns are encoded by ordered target statistics: the encoding of
a row uses only rows that precede it in a random permutation, which keeps a
row's own label out of its encoded value. Training averages the encodings of
several permutations; inference replays frozen full-history statistics. The
booster itself is plain Newton-step gradient boosting on the encoded matrix,
one symmetric (oblivious) tree per iteration: every level of a stage shares a
single (feature, threshold) pair, so a stage has exactly 2^depth leaves.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .dataio import Dataset


@dataclass(frozen=True)
class BoostConfig:
    iterations: int = 100
    learning_rate: float = 0.1
    depth: int = 6
    loss: str = "auto"  # logistic for binary, softmax for multiclass
    l2_leaf_reg: float = 3.0
    permutation_count: int = 4
    seed: int = 0
    n_bins: int = 255

    def __post_init__(self):
        if self.iterations < 0 or self.depth < 1:
            raise ValueError("iterations must be >= 0 and depth >= 1")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.l2_leaf_reg < 0 or self.permutation_count < 1:
            raise ValueError("l2_leaf_reg >= 0 and permutation_count >= 1 required")
        if self.loss not in ("auto", "logistic", "softmax"):
            raise ValueError(f"unknown loss {self.loss!r}")

    def to_dict(self) -> dict:
        return {
            "iterations": self.iterations,
            "learning_rate": self.learning_rate,
            "depth": self.depth,
            "loss": self.loss,
            "l2_leaf_reg": self.l2_leaf_reg,
            "permutation_count": self.permutation_count,
            "seed": self.seed,
            "n_bins": self.n_bins,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "BoostConfig":
        return cls(**d)


def ordered_target_stat(
    column: np.ndarray, labels: np.ndarray, permutation: np.ndarray, prior: float
) -> np.ndarray:
    """Leak-free target statistic for one categorical column.

    The row at permutation position t with category c is encoded as
    (sum of labels over earlier rows of category c + prior) / (count of
    earlier rows of category c + 1); rows at or after t never contribute.
    """
    column = np.asarray(column)
    labels = np.asarray(labels, dtype=np.float64)
    permutation = np.asarray(permutation)
    n = column.shape[0]
    if sorted(permutation.tolist()) != list(range(n)):
        raise ValueError("permutation must be a bijection over row indices")

    position = np.empty(n, dtype=np.int64)
    position[permutation] = np.arange(n)
    _, cat_codes = np.unique(column, return_inverse=True)

    # group rows by category, ordered by permutation position within group
    order = np.lexsort((position, cat_codes))
    g_codes = cat_codes[order]
    g_labels = labels[order]
    starts = np.flatnonzero(np.r_[True, g_codes[1:] != g_codes[:-1]])
    group_of = np.repeat(np.arange(starts.size), np.diff(np.r_[starts, n]))
    rank_in_group = np.arange(n) - starts[group_of]
    csum = np.cumsum(g_labels) - g_labels
    base = np.r_[0.0, np.cumsum(g_labels)][starts[group_of]]
    prefix_sum = csum - base

    encoded = np.empty(n)
    encoded[order] = (prefix_sum + prior) / (rank_in_group + 1.0)
    return encoded


@dataclass(frozen=True)
class CategoryStats:
    """Frozen full-history statistics for one categorical column."""

    categories: np.ndarray  # sorted raw values seen at fit time
    sums: np.ndarray
    counts: np.ndarray
    prior: float

    def encode(self, values: np.ndarray) -> np.ndarray:
        idx = np.searchsorted(self.categories, values)
        idx = np.clip(idx, 0, len(self.categories) - 1)
        known = self.categories[idx] == values
        sums = np.where(known, self.sums[idx], 0.0)
        counts = np.where(known, self.counts[idx], 0.0)
        return (sums + self.prior) / (counts + 1.0)

    def to_dict(self) -> dict:
        return {
            "categories": self.categories.tolist(),
            "sums": self.sums.tolist(),
            "counts": self.counts.tolist(),
            "prior": self.prior,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CategoryStats":
        return cls(
            categories=np.asarray(d["categories"], dtype=np.float64),
            sums=np.asarray(d["sums"], dtype=np.float64),
            counts=np.asarray(d["counts"], dtype=np.float64),
            prior=float(d["prior"]),
        )


@dataclass
class ObliviousTree:
    """One boosting stage: `depth` shared (feature, threshold) levels.

    Leaf index bit L is 1 when x[features[L]] > thresholds[L]. leaf_values is
    (2^depth, n_outputs); empty leaves hold zeros.
    """

    features: np.ndarray
    thresholds: np.ndarray
    leaf_values: np.ndarray
    leaf_covers: np.ndarray

    def leaf_index(self, X: np.ndarray) -> np.ndarray:
        idx = np.zeros(X.shape[0], dtype=np.int64)
        for f, t in zip(self.features, self.thresholds):
            idx = (idx << 1) | (X[:, f] > t)
        return idx

    def to_dict(self) -> dict:
        return {
            "features": self.features.tolist(),
            "thresholds": self.thresholds.tolist(),
            "leaf_values": self.leaf_values.tolist(),
            "leaf_covers": self.leaf_covers.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ObliviousTree":
        return cls(
            features=np.asarray(d["features"], dtype=np.int64),
            thresholds=np.asarray(d["thresholds"], dtype=np.float64),
            leaf_values=np.asarray(d["leaf_values"], dtype=np.float64),
            leaf_covers=np.asarray(d["leaf_covers"], dtype=np.float64),
        )


@dataclass
class BoostedModel:
    base_score: np.ndarray  # per-output log-odds prior (1 output for binary)
    stages: list[ObliviousTree]
    cat_stats: dict[int, CategoryStats]
    config: BoostConfig
    n_classes: int
    feature_count: int
    class_names: tuple[str, ...] = field(default=())
    train_loss: list[float] = field(default_factory=list)

    @property
    def n_outputs(self) -> int:
        return self.base_score.shape[0]

    @property
    def binary(self) -> bool:
        return self.n_outputs == 1

    def encode(self, rows: np.ndarray) -> np.ndarray:
        """Replace categorical columns with frozen full-history statistics."""
        if not self.cat_stats:
            return rows
        rows = np.array(rows, dtype=np.float64, copy=True)
        for j, stats in self.cat_stats.items():
            rows[:, j] = stats.encode(rows[:, j])
        return rows

    def decision_margin(self, rows: np.ndarray) -> np.ndarray:
        """base_score + sum of stage outputs, on encoded rows; (n, n_outputs)."""
        rows = np.atleast_2d(np.asarray(rows, dtype=np.float64))
        if rows.shape[1] != self.feature_count:
            raise ValueError(f"expected {self.feature_count} features, got {rows.shape[1]}")
        enc = self.encode(rows)
        margin = np.broadcast_to(self.base_score, (enc.shape[0], self.n_outputs)).copy()
        for stage in self.stages:
            margin += stage.leaf_values[stage.leaf_index(enc)]
        return margin

    def to_dict(self) -> dict:
        return {
            "base_score": self.base_score.tolist(),
            "stages": [s.to_dict() for s in self.stages],
            "cat_stats": {str(k): v.to_dict() for k, v in self.cat_stats.items()},
            "config": self.config.to_dict(),
            "n_classes": self.n_classes,
            "feature_count": self.feature_count,
            "class_names": list(self.class_names),
            "train_loss": list(self.train_loss),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "BoostedModel":
        return cls(
            base_score=np.asarray(d["base_score"], dtype=np.float64),
            stages=[ObliviousTree.from_dict(s) for s in d["stages"]],
            cat_stats={int(k): CategoryStats.from_dict(v) for k, v in d["cat_stats"].items()},
            config=BoostConfig.from_dict(d["config"]),
            n_classes=int(d["n_classes"]),
            feature_count=int(d["feature_count"]),
            class_names=tuple(d["class_names"]),
            train_loss=[float(x) for x in d["train_loss"]],
        )


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def _softmax(z):
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def _probabilities(margin: np.ndarray) -> np.ndarray:
    if margin.shape[1] == 1:
        p1 = _sigmoid(margin[:, 0])
        return np.column_stack([1.0 - p1, p1])
    return _softmax(margin)


def _log_loss(y: np.ndarray, proba: np.ndarray) -> float:
    p = np.clip(proba[np.arange(len(y)), y], 1e-15, None)
    return float(-np.log(p).mean())


def _quantile_thresholds(col: np.ndarray, n_bins: int) -> np.ndarray:
    qs = np.linspace(0, 1, n_bins + 1)[1:-1]
    edges = np.unique(np.quantile(col, qs))
    return edges[(edges > col.min()) & (edges <= col.max())]


def _fit_cat_stats(column: np.ndarray, target: np.ndarray, prior: float) -> CategoryStats:
    cats, inverse = np.unique(column, return_inverse=True)
    sums = np.zeros(cats.size)
    np.add.at(sums, inverse, target)
    counts = np.bincount(inverse, minlength=cats.size).astype(np.float64)
    return CategoryStats(categories=cats, sums=sums, counts=counts, prior=prior)


def _fit_stage(
    binned: np.ndarray,
    thresholds_per_col: list[np.ndarray],
    grad: np.ndarray,
    hess: np.ndarray,
    depth: int,
    l2: float,
    lr: float,
) -> ObliviousTree:
    """Greedy level-by-level symmetric tree on pre-binned columns."""
    n, d = binned.shape
    k = grad.shape[1]
    leaf = np.zeros(n, dtype=np.int64)
    features, cuts = [], []
    for level in range(depth):
        n_leaves = 1 << level
        best = None  # (score, feature, bin_j)
        for f in range(d):
            nb = thresholds_per_col[f].size
            if nb == 0:
                continue
            flat = leaf * (nb + 1) + binned[:, f]
            size = n_leaves * (nb + 1)
            g_hist = np.column_stack(
                [np.bincount(flat, weights=grad[:, c], minlength=size) for c in range(k)]
            )
            h_hist = np.column_stack(
                [np.bincount(flat, weights=hess[:, c], minlength=size) for c in range(k)]
            )
            g_hist = g_hist.reshape(n_leaves, nb + 1, k)
            h_hist = h_hist.reshape(n_leaves, nb + 1, k)
            # left stats for threshold j = bins 0..j inclusive
            gl = np.cumsum(g_hist, axis=1)[:, :-1, :]
            hl = np.cumsum(h_hist, axis=1)[:, :-1, :]
            gt = g_hist.sum(axis=1, keepdims=True)
            ht = h_hist.sum(axis=1, keepdims=True)
            gr = gt - gl
            hr = ht - hl
            score = (gl**2 / (hl + l2) + gr**2 / (hr + l2)).sum(axis=(0, 2))
            j = int(np.argmax(score))
            if best is None or score[j] > best[0]:
                best = (float(score[j]), f, j)
        if best is None:
            # no splittable column anywhere; degenerate constant stage
            features = np.zeros(0, dtype=np.int64)
            cuts = np.zeros(0)
            leaf = np.zeros(n, dtype=np.int64)
            break
        _, f, j = best
        features.append(f)
        cuts.append(float(thresholds_per_col[f][j]))
        leaf = (leaf << 1) | (binned[:, f] > j)

    n_leaves = 1 << len(features)
    g_leaf = np.zeros((n_leaves, k))
    h_leaf = np.zeros((n_leaves, k))
    np.add.at(g_leaf, leaf, grad)
    np.add.at(h_leaf, leaf, hess)
    with np.errstate(divide="ignore", invalid="ignore"):
        values = -lr * g_leaf / (h_leaf + l2)
    values[~np.isfinite(values)] = 0.0
    covers = np.bincount(leaf, minlength=n_leaves).astype(np.float64)
    values[covers == 0] = 0.0
    return ObliviousTree(
        features=np.asarray(features, dtype=np.int64),
        thresholds=np.asarray(cuts, dtype=np.float64),
        leaf_values=values,
        leaf_covers=covers,
    )


def fit_boosted(train: Dataset, config: BoostConfig) -> BoostedModel:
    """Newton-step gradient boosting with oblivious stages.

    base_score is the class-prior log-odds; each stage fits the negative
    gradient of the logistic (binary) or softmax (multiclass) loss, with leaf
    values -sum(grad) / (sum(hess) + l2_leaf_reg) scaled by the learning rate.
    Training log-loss is recorded after every stage.
    """
    if train.n == 0:
        raise ValueError("cannot fit on an empty dataset")
    y = train.labels
    k_classes = train.n_classes
    present = np.unique(y)
    if present.size < 2:
        raise ValueError("boosting needs at least two classes present in the training data")
    loss = config.loss
    if loss == "auto":
        loss = "logistic" if k_classes == 2 else "softmax"
    if loss == "logistic" and k_classes != 2:
        raise ValueError("logistic loss requires exactly two classes")

    rng = np.random.default_rng(config.seed)
    X = np.array(train.rows, dtype=np.float64, copy=True)
    cat_cols = train.schema.categorical_indices()

    # leak-free training encoding: averaged ordered statistics
    target = y.astype(np.float64)
    prior = float(target.mean())
    cat_stats: dict[int, CategoryStats] = {}
    for j in cat_cols:
        raw = train.rows[:, j]
        enc = np.zeros(train.n)
        for _ in range(config.permutation_count):
            enc += ordered_target_stat(raw, target, rng.permutation(train.n), prior)
        X[:, j] = enc / config.permutation_count
        cat_stats[j] = _fit_cat_stats(raw, target, prior)

    # class-prior log-odds
    counts = np.bincount(y, minlength=k_classes).astype(np.float64)
    if loss == "logistic":
        p1 = counts[1] / counts.sum()
        base = np.array([np.log(p1 / (1.0 - p1))])
        y_hot = y[:, None].astype(np.float64)
    else:
        base = np.log(np.clip(counts / counts.sum(), 1e-15, None))
        y_hot = np.zeros((train.n, k_classes))
        y_hot[np.arange(train.n), y] = 1.0

    thresholds_per_col = [_quantile_thresholds(X[:, f], config.n_bins) for f in range(X.shape[1])]
    binned = np.column_stack(
        [
            np.searchsorted(thresholds_per_col[f], X[:, f], side="left")
            for f in range(X.shape[1])
        ]
    ).astype(np.int64) if X.shape[1] else np.zeros((train.n, 0), dtype=np.int64)

    margin = np.broadcast_to(base, (train.n, base.size)).copy()
    stages: list[ObliviousTree] = []
    losses: list[float] = []
    for _ in range(config.iterations):
        if loss == "logistic":
            p = _sigmoid(margin)
        else:
            p = _softmax(margin)
        grad = p - y_hot
        hess = p * (1.0 - p)
        stage = _fit_stage(
            binned, thresholds_per_col, grad, hess, config.depth, config.l2_leaf_reg,
            config.learning_rate,
        )
        margin = margin + stage.leaf_values[stage.leaf_index(X)]
        stages.append(stage)
        losses.append(_log_loss(y, _probabilities(margin)))

    return BoostedModel(
        base_score=base,
        stages=stages,
        cat_stats=cat_stats,
        config=config,
        n_classes=k_classes,
        feature_count=train.n_features,
        class_names=train.class_names,
        train_loss=losses,
    )


def predict_proba(model: BoostedModel, rows: np.ndarray) -> np.ndarray:
    """Sigmoid (binary) or softmax (multiclass) of the decision margin."""
    return _probabilities(model.decision_margin(rows))


def predict(model: BoostedModel, rows: np.ndarray) -> np.ndarray:
    return predict_proba(model, rows).argmax(axis=1)
