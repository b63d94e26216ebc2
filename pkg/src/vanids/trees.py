"""Entropy-criterion decision trees and bootstrap-aggregated random forests.

Trees are stored as flat node arrays (feature, threshold, children, per-node
class distribution, cover) so they serialize directly and so the Shapley
module can read covers without retraversing training data. The split
predicate is x <= threshold; thresholds are midpoints between consecutive
distinct sorted values.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .dataio import Dataset

LEAF = -1


def entropy(counts) -> float:
    """Shannon entropy in bits of a class-count vector."""
    counts = np.asarray(counts, dtype=np.float64)
    if counts.min() < 0:
        raise ValueError("class counts must be non-negative")
    total = counts.sum()
    if total <= 0:
        raise ValueError("entropy of an empty count vector is undefined")
    p = counts[counts > 0] / total
    return float(-(p * np.log2(p)).sum())


def _entropy_from_count_matrix(counts: np.ndarray) -> np.ndarray:
    """Row-wise entropy (bits) of an (m, k) count matrix. Zero rows give 0."""
    totals = counts.sum(axis=1, keepdims=True)
    with np.errstate(divide="ignore", invalid="ignore"):
        p = np.where(totals > 0, counts / totals, 0.0)
        plogp = np.where(p > 0, p * np.log2(p), 0.0)
    return -plogp.sum(axis=1)


def best_split(
    rows: np.ndarray,
    labels: np.ndarray,
    candidate_features,
    n_classes: int,
    min_samples_leaf: int = 1,
):
    """Exhaustive midpoint search for the split with the highest information gain.

    Ties are broken toward the lower feature index, then the lower threshold.
    Returns (feature, threshold, gain) or None when the node is pure or no
    legal cut keeps both children at min_samples_leaf rows. Zero-gain splits
    of impure nodes are allowed; patterns like XOR need one to be separable.
    """
    m = rows.shape[0]
    parent_counts = np.bincount(labels, minlength=n_classes)
    parent_h = entropy(parent_counts)
    if parent_h == 0.0:
        return None

    best = None  # (gain, feature, threshold)
    onehot = np.zeros((m, n_classes))
    onehot[np.arange(m), labels] = 1.0
    for f in sorted(int(f) for f in candidate_features):
        values = rows[:, f]
        order = np.argsort(values, kind="stable")
        sv = values[order]
        # split after position i (1-based count i+1 on the left)
        cut = np.flatnonzero(sv[:-1] < sv[1:])
        if cut.size == 0:
            continue
        left_n = cut + 1
        right_n = m - left_n
        ok = (left_n >= min_samples_leaf) & (right_n >= min_samples_leaf)
        if not ok.any():
            continue
        cut, left_n, right_n = cut[ok], left_n[ok], right_n[ok]
        left_counts = onehot[order].cumsum(axis=0)[cut]
        right_counts = parent_counts - left_counts
        child_h = (
            left_n * _entropy_from_count_matrix(left_counts)
            + right_n * _entropy_from_count_matrix(right_counts)
        ) / m
        gains = parent_h - child_h
        i = int(np.argmax(gains))
        threshold = float((sv[cut[i]] + sv[cut[i] + 1]) / 2.0)
        if best is None or gains[i] > best[0]:
            best = (float(gains[i]), f, threshold)
    if best is None:
        return None
    gain, f, threshold = best
    return f, threshold, gain


@dataclass(frozen=True)
class ForestConfig:
    n_estimators: int = 50
    max_depth: int = 20
    min_samples_split: int = 10
    min_samples_leaf: int = 2
    criterion: str = "entropy"
    bootstrap: bool = True
    features_per_split: int | str = "sqrt"
    seed: int = 0
    n_jobs: int = 1

    def __post_init__(self):
        if self.n_estimators < 1 or self.max_depth < 1:
            raise ValueError("n_estimators and max_depth must be at least 1")
        if self.min_samples_leaf < 1 or self.min_samples_split < 2:
            raise ValueError("min_samples_leaf >= 1 and min_samples_split >= 2 required")
        if self.criterion != "entropy":
            raise ValueError("only the entropy criterion is supported")

    def candidates_per_node(self, n_features: int) -> int:
        if self.features_per_split == "all":
            return n_features
        if self.features_per_split == "sqrt":
            return max(1, int(np.sqrt(n_features)))
        k = int(self.features_per_split)
        if k < 1:
            raise ValueError("features_per_split must be positive")
        return min(k, n_features)

    def to_dict(self) -> dict:
        return {
            "n_estimators": self.n_estimators,
            "max_depth": self.max_depth,
            "min_samples_split": self.min_samples_split,
            "min_samples_leaf": self.min_samples_leaf,
            "criterion": self.criterion,
            "bootstrap": self.bootstrap,
            "features_per_split": self.features_per_split,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ForestConfig":
        return cls(**d)


@dataclass
class Tree:
    """Flat-array binary tree; node 0 is the root, children LEAF on leaves."""

    feature: np.ndarray  # int, LEAF marks a leaf
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray  # (n_nodes, n_classes) class distribution at the node
    cover: np.ndarray  # training rows that reached the node

    @property
    def n_nodes(self) -> int:
        return self.feature.shape[0]

    def apply(self, X: np.ndarray) -> np.ndarray:
        """Leaf index for every row, by vectorized traversal."""
        idx = np.zeros(X.shape[0], dtype=np.int64)
        while True:
            feat = self.feature[idx]
            active = feat != LEAF
            if not active.any():
                return idx
            rows = np.flatnonzero(active)
            go_left = X[rows, feat[rows]] <= self.threshold[idx[rows]]
            idx[rows] = np.where(go_left, self.left[idx[rows]], self.right[idx[rows]])

    def predict_proba(self, X: np.ndarray) -> np.ndarray:
        return self.value[self.apply(X)]

    def depth(self) -> int:
        depths = np.zeros(self.n_nodes, dtype=int)
        for i in range(self.n_nodes):
            if self.feature[i] != LEAF:
                depths[self.left[i]] = depths[i] + 1
                depths[self.right[i]] = depths[i] + 1
        return int(depths.max()) if self.n_nodes else 0

    def to_dict(self) -> dict:
        return {
            "feature": self.feature.tolist(),
            "threshold": self.threshold.tolist(),
            "left": self.left.tolist(),
            "right": self.right.tolist(),
            "value": self.value.tolist(),
            "cover": self.cover.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Tree":
        return cls(
            feature=np.asarray(d["feature"], dtype=np.int64),
            threshold=np.asarray(d["threshold"], dtype=np.float64),
            left=np.asarray(d["left"], dtype=np.int64),
            right=np.asarray(d["right"], dtype=np.int64),
            value=np.asarray(d["value"], dtype=np.float64),
            cover=np.asarray(d["cover"], dtype=np.float64),
        )


def fit_tree(
    train: Dataset, config: ForestConfig, rng: np.random.Generator | None = None
) -> Tree:
    """Greedy recursive construction on the full dataset (no bootstrap here)."""
    if train.n == 0:
        raise ValueError("cannot fit a tree on an empty dataset")
    rng = rng or np.random.default_rng(config.seed)
    return _build_tree(train.rows, train.labels, train.n_classes, config, rng)


def _build_tree(
    X: np.ndarray, y: np.ndarray, n_classes: int, config: ForestConfig, rng: np.random.Generator
) -> Tree:
    n_features = X.shape[1]
    m_try = config.candidates_per_node(n_features)

    feature, threshold, left, right, value, cover = [], [], [], [], [], []

    def new_node(idx: np.ndarray) -> int:
        counts = np.bincount(y[idx], minlength=n_classes).astype(np.float64)
        feature.append(LEAF)
        threshold.append(np.nan)
        left.append(LEAF)
        right.append(LEAF)
        value.append(counts / counts.sum())
        cover.append(float(idx.size))
        return len(feature) - 1

    # Depth-first, left before right, so the candidate-feature stream is
    # consumed in a reproducible order.
    root_idx = np.arange(X.shape[0])
    stack = [(new_node(root_idx), root_idx, 0)]
    while stack:
        node, idx, depth = stack.pop()
        if depth >= config.max_depth or idx.size < config.min_samples_split:
            continue
        sub_y = y[idx]
        if (sub_y == sub_y[0]).all():
            continue
        if m_try < n_features:
            cand = rng.choice(n_features, size=m_try, replace=False)
        else:
            cand = np.arange(n_features)
        found = best_split(X[idx], sub_y, cand, n_classes, config.min_samples_leaf)
        if found is None:
            continue
        f, t, _gain = found
        go_left = X[idx, f] <= t
        feature[node] = f
        threshold[node] = t
        left_child = new_node(idx[go_left])
        right_child = new_node(idx[~go_left])
        left[node] = left_child
        right[node] = right_child
        # push right first so the left child is processed next
        stack.append((right_child, idx[~go_left], depth + 1))
        stack.append((left_child, idx[go_left], depth + 1))

    return Tree(
        feature=np.asarray(feature, dtype=np.int64),
        threshold=np.asarray(threshold, dtype=np.float64),
        left=np.asarray(left, dtype=np.int64),
        right=np.asarray(right, dtype=np.int64),
        value=np.asarray(value, dtype=np.float64),
        cover=np.asarray(cover, dtype=np.float64),
    )


@dataclass
class Forest:
    trees: list[Tree]
    config: ForestConfig
    n_classes: int
    feature_count: int
    class_names: tuple[str, ...] = field(default=())

    def to_dict(self) -> dict:
        return {
            "config": self.config.to_dict(),
            "n_classes": self.n_classes,
            "feature_count": self.feature_count,
            "class_names": list(self.class_names),
            "trees": [t.to_dict() for t in self.trees],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Forest":
        return cls(
            trees=[Tree.from_dict(t) for t in d["trees"]],
            config=ForestConfig.from_dict(d["config"]),
            n_classes=int(d["n_classes"]),
            feature_count=int(d["feature_count"]),
            class_names=tuple(d["class_names"]),
        )


def _fit_one_tree(args) -> Tree:
    X, y, n_classes, config, tree_index = args
    rng = np.random.default_rng([config.seed, tree_index])
    if config.bootstrap:
        idx = rng.integers(0, X.shape[0], X.shape[0])
        X, y = X[idx], y[idx]
    return _build_tree(X, y, n_classes, config, rng)


def fit_forest(train: Dataset, config: ForestConfig) -> Forest:
    """Train n_estimators trees on bootstrap resamples.

    Each tree draws its bootstrap and its per-node candidate features from a
    stream seeded by (seed, tree index), so the fitted forest is identical at
    any n_jobs.
    """
    if train.n == 0:
        raise ValueError("cannot fit a forest on an empty dataset")
    jobs = [(train.rows, train.labels, train.n_classes, config, i) for i in range(config.n_estimators)]
    if config.n_jobs != 1:
        workers = None if config.n_jobs in (0, -1) else config.n_jobs
        with ThreadPoolExecutor(max_workers=workers) as pool:
            trees = list(pool.map(_fit_one_tree, jobs))
    else:
        trees = [_fit_one_tree(j) for j in jobs]
    return Forest(
        trees=trees,
        config=config,
        n_classes=train.n_classes,
        feature_count=train.n_features,
        class_names=train.class_names,
    )


def predict_proba(forest: Forest, rows: np.ndarray) -> np.ndarray:
    """Mean of the per-tree leaf class distributions (soft vote)."""
    rows = np.atleast_2d(np.asarray(rows, dtype=np.float64))
    if rows.shape[1] != forest.feature_count:
        raise ValueError(
            f"expected {forest.feature_count} features, got {rows.shape[1]}"
        )
    acc = np.zeros((rows.shape[0], forest.n_classes))
    for t in forest.trees:
        acc += t.predict_proba(rows)
    return acc / len(forest.trees)


def predict(forest: Forest, rows: np.ndarray, vote: str = "soft") -> np.ndarray:
    """Class labels by soft (mean-probability) or hard (majority) voting."""
    rows = np.atleast_2d(np.asarray(rows, dtype=np.float64))
    if vote == "soft":
        return predict_proba(forest, rows).argmax(axis=1)
    if vote == "hard":
        votes = np.zeros((rows.shape[0], forest.n_classes), dtype=np.int64)
        for t in forest.trees:
            pred = t.predict_proba(rows).argmax(axis=1)
            votes[np.arange(rows.shape[0]), pred] += 1
        return votes.argmax(axis=1)
    raise ValueError("vote must be 'soft' or 'hard'")
