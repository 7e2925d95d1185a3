"""Random forest: bagged axis-aligned decision trees with Gini splits.

Each tree draws a bootstrap sample of the training rows and, at every node,
evaluates splits over ceil(sqrt(D)) features drawn without replacement.
All randomness flows from a single seed through per-tree child seeds, so
training is bit-reproducible.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from hemoclass.errors import ConfigError, DimensionMismatchError


@dataclass(frozen=True)
class Tree:
    """Flat-array tree: feature < 0 marks a leaf holding `label`."""

    feature: np.ndarray      # (n_nodes,) int32
    threshold: np.ndarray    # (n_nodes,) float64
    left: np.ndarray         # (n_nodes,) int32
    right: np.ndarray        # (n_nodes,) int32
    label: np.ndarray        # (n_nodes,) int32


@dataclass(frozen=True)
class ForestModel:
    trees: tuple
    tree_seeds: np.ndarray   # (T,) uint64 bootstrap/split seeds
    num_classes: int
    dim: int
    max_depth: int | None


def _gini_weighted(left_counts, right_counts):
    """Total child impurity n_l*gini_l + n_r*gini_r (lower is better)."""
    nl = left_counts.sum(axis=-1)
    nr = right_counts.sum(axis=-1)
    gl = nl - (left_counts ** 2).sum(axis=-1) / np.maximum(nl, 1)
    gr = nr - (right_counts ** 2).sum(axis=-1) / np.maximum(nr, 1)
    return gl + gr


def _best_split(x, y, feat_ids, num_classes):
    """Best (feature, threshold, score) over the candidate features."""
    n = len(y)
    onehot = np.zeros((n, num_classes))
    onehot[np.arange(n), y] = 1.0
    total = onehot.sum(axis=0)
    # Any valid split of an impure node is taken, even at zero Gini decrease
    # (an XOR-shaped node needs a zero-gain split to become separable below).
    best = (None, 0.0, np.inf)
    for f in feat_ids:
        order = np.argsort(x[:, f], kind="stable")
        vals = x[order, f]
        cuts = np.flatnonzero(vals[1:] > vals[:-1])   # split after these ranks
        if len(cuts) == 0:
            continue
        prefix = np.cumsum(onehot[order], axis=0)
        left = prefix[cuts]
        score = _gini_weighted(left, total - left)
        k = int(np.argmin(score))
        if score[k] < best[2]:
            thr = 0.5 * (vals[cuts[k]] + vals[cuts[k] + 1])
            best = (int(f), float(thr), float(score[k]))
    return best


def _grow(x, y, rng, num_classes, max_depth, n_candidates):
    feature, threshold, left, right, label = [], [], [], [], []

    def leaf_label(rows):
        counts = np.bincount(y[rows], minlength=num_classes)
        return int(counts.argmax())          # ties resolve to the lower class

    def add_node():
        feature.append(-1)
        threshold.append(0.0)
        left.append(-1)
        right.append(-1)
        label.append(-1)
        return len(feature) - 1

    def build(rows, depth):
        node = add_node()
        pure = len(np.unique(y[rows])) == 1
        if pure or len(rows) < 2 or (max_depth is not None and depth >= max_depth):
            label[node] = leaf_label(rows)
            return node
        feat_ids = np.sort(rng.choice(x.shape[1], size=n_candidates,
                                      replace=False))
        f, thr, _ = _best_split(x[rows], y[rows], feat_ids, num_classes)
        if f is None:
            label[node] = leaf_label(rows)
            return node
        mask = x[rows, f] <= thr
        feature[node] = f
        threshold[node] = thr
        left[node] = build(rows[mask], depth + 1)
        right[node] = build(rows[~mask], depth + 1)
        return node

    build(np.arange(len(y)), 0)
    return Tree(
        feature=np.asarray(feature, dtype=np.int32),
        threshold=np.asarray(threshold, dtype=np.float64),
        left=np.asarray(left, dtype=np.int32),
        right=np.asarray(right, dtype=np.int32),
        label=np.asarray(label, dtype=np.int32),
    )


def train_forest(x: np.ndarray, y: np.ndarray, n_trees: int,
                 max_depth: int | None, seed: int,
                 num_classes: int | None = None) -> ForestModel:
    x = np.ascontiguousarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    if n_trees < 1:
        raise ConfigError(f"tree count must be >= 1, got {n_trees}")
    if len(x) != len(y) or len(x) == 0:
        raise ConfigError("feature rows and labels disagree or are empty")
    if num_classes is None:
        num_classes = int(y.max()) + 1
    n_candidates = min(x.shape[1], int(np.ceil(np.sqrt(x.shape[1]))))
    tree_seeds = np.random.default_rng(seed).integers(
        0, 2 ** 63, size=n_trees, dtype=np.uint64)
    trees = []
    for t in range(n_trees):
        rng = np.random.default_rng(tree_seeds[t])
        boot = rng.integers(0, len(x), size=len(x))
        trees.append(_grow(x[boot], y[boot], rng, num_classes,
                           max_depth, n_candidates))
    return ForestModel(trees=tuple(trees), tree_seeds=tree_seeds,
                       num_classes=num_classes, dim=x.shape[1],
                       max_depth=max_depth)


def _tree_predict(tree: Tree, q: np.ndarray) -> np.ndarray:
    node = np.zeros(len(q), dtype=np.int32)
    active = tree.feature[node] >= 0
    while active.any():
        idx = np.flatnonzero(active)
        f = tree.feature[node[idx]]
        goes_left = q[idx, f] <= tree.threshold[node[idx]]
        node[idx] = np.where(goes_left, tree.left[node[idx]],
                             tree.right[node[idx]])
        active = tree.feature[node] >= 0
    return tree.label[node]


def predict_forest(model: ForestModel, queries: np.ndarray) -> np.ndarray:
    q = np.asarray(queries, dtype=np.float64)
    if q.ndim != 2 or q.shape[1] != model.dim:
        raise DimensionMismatchError(
            f"queries must be (n, {model.dim}), got {q.shape}")
    votes = np.zeros((len(q), model.num_classes), dtype=np.int64)
    for tree in model.trees:
        labels = _tree_predict(tree, q)
        votes[np.arange(len(q)), labels] += 1
    return votes.argmax(axis=1)
