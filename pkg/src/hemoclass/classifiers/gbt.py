"""Second-order gradient-boosted trees with a softmax objective.

Every boosting round fits one regression tree per class to the gradient
g = p - 1{y=k} and hessian h = p(1-p) of the multiclass log-loss at the
current scores. Splits maximize the second-order gain

    1/2 * (GL^2/(HL+lam) + GR^2/(HR+lam) - G^2/(H+lam))

and each leaf contributes -G/(H+lam), scaled by the shrinkage, to the class
score. Scores start at zero, so the initial prediction is the uniform prior.
No row or column subsampling is performed; training is deterministic.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from hemoclass.errors import ConfigError, DimensionMismatchError

_MIN_GAIN = 1e-12


@dataclass(frozen=True)
class RegressionTree:
    """Flat-array tree: feature < 0 marks a leaf holding `value`."""

    feature: np.ndarray      # (n_nodes,) int32
    threshold: np.ndarray    # (n_nodes,) float64
    left: np.ndarray         # (n_nodes,) int32
    right: np.ndarray        # (n_nodes,) int32
    value: np.ndarray        # (n_nodes,) float64


@dataclass(frozen=True)
class GbtModel:
    trees: tuple             # R rounds x K classes, row-major
    num_classes: int
    dim: int
    n_rounds: int
    shrinkage: float
    l2_leaf: float
    max_depth: int | None
    train_loss: tuple        # per-round multiclass log-loss on the train set


def _leaf_value(g_sum, h_sum, l2_leaf):
    return -g_sum / (h_sum + l2_leaf)


def _best_split(x, g, h, l2_leaf):
    """Best (feature, threshold, gain) by the second-order criterion."""
    g_total, h_total = g.sum(), h.sum()
    parent = g_total ** 2 / (h_total + l2_leaf)
    best = (None, 0.0, _MIN_GAIN)
    for f in range(x.shape[1]):
        order = np.argsort(x[:, f], kind="stable")
        vals = x[order, f]
        cuts = np.flatnonzero(vals[1:] > vals[:-1])
        if len(cuts) == 0:
            continue
        gl = np.cumsum(g[order])[cuts]
        hl = np.cumsum(h[order])[cuts]
        gain = (gl ** 2 / (hl + l2_leaf)
                + (g_total - gl) ** 2 / (h_total - hl + l2_leaf)
                - parent)
        k = int(np.argmax(gain))
        if gain[k] > best[2]:
            thr = 0.5 * (vals[cuts[k]] + vals[cuts[k] + 1])
            best = (int(f), float(thr), float(gain[k]))
    return best


def _grow(x, g, h, l2_leaf, max_depth):
    feature, threshold, left, right, value = [], [], [], [], []

    def add_node():
        feature.append(-1)
        threshold.append(0.0)
        left.append(-1)
        right.append(-1)
        value.append(0.0)
        return len(feature) - 1

    def build(rows, depth):
        node = add_node()
        if len(rows) < 2 or (max_depth is not None and depth >= max_depth):
            value[node] = _leaf_value(g[rows].sum(), h[rows].sum(), l2_leaf)
            return node
        f, thr, _ = _best_split(x[rows], g[rows], h[rows], l2_leaf)
        if f is None:
            value[node] = _leaf_value(g[rows].sum(), h[rows].sum(), l2_leaf)
            return node
        mask = x[rows, f] <= thr
        feature[node] = f
        threshold[node] = thr
        left[node] = build(rows[mask], depth + 1)
        right[node] = build(rows[~mask], depth + 1)
        return node

    build(np.arange(len(g)), 0)
    return RegressionTree(
        feature=np.asarray(feature, dtype=np.int32),
        threshold=np.asarray(threshold, dtype=np.float64),
        left=np.asarray(left, dtype=np.int32),
        right=np.asarray(right, dtype=np.int32),
        value=np.asarray(value, dtype=np.float64),
    )


def _tree_apply(tree: RegressionTree, q: np.ndarray) -> np.ndarray:
    node = np.zeros(len(q), dtype=np.int32)
    active = tree.feature[node] >= 0
    while active.any():
        idx = np.flatnonzero(active)
        f = tree.feature[node[idx]]
        goes_left = q[idx, f] <= tree.threshold[node[idx]]
        node[idx] = np.where(goes_left, tree.left[node[idx]],
                             tree.right[node[idx]])
        active = tree.feature[node] >= 0
    return tree.value[node]


def _softmax_rows(scores: np.ndarray) -> np.ndarray:
    z = scores - scores.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def train_gbt(x: np.ndarray, y: np.ndarray, n_rounds: int, shrinkage: float,
              l2_leaf: float, max_depth: int | None,
              num_classes: int | None = None) -> GbtModel:
    x = np.ascontiguousarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    if n_rounds < 1:
        raise ConfigError(f"round count must be >= 1, got {n_rounds}")
    if not 0.0 < shrinkage <= 1.0:
        raise ConfigError(f"shrinkage must be in (0, 1], got {shrinkage}")
    if l2_leaf < 0.0:
        raise ConfigError(f"leaf regularization must be >= 0, got {l2_leaf}")
    if len(x) != len(y) or len(x) == 0:
        raise ConfigError("feature rows and labels disagree or are empty")
    if num_classes is None:
        num_classes = int(y.max()) + 1
    n = len(y)
    scores = np.zeros((n, num_classes))
    onehot = np.zeros((n, num_classes))
    onehot[np.arange(n), y] = 1.0
    trees = []
    losses = []
    for _ in range(n_rounds):
        probs = _softmax_rows(scores)
        grad = probs - onehot
        hess = probs * (1.0 - probs)
        for k in range(num_classes):
            tree = _grow(x, grad[:, k], hess[:, k], l2_leaf, max_depth)
            trees.append(tree)
            scores[:, k] += shrinkage * _tree_apply(tree, x)
        probs = _softmax_rows(scores)
        picked = np.clip(probs[np.arange(n), y], 1e-12, None)
        losses.append(float(-np.log(picked).mean()))
    return GbtModel(trees=tuple(trees), num_classes=num_classes,
                    dim=x.shape[1], n_rounds=n_rounds,
                    shrinkage=float(shrinkage), l2_leaf=float(l2_leaf),
                    max_depth=max_depth, train_loss=tuple(losses))


def decision_scores(model: GbtModel, queries: np.ndarray) -> np.ndarray:
    q = np.asarray(queries, dtype=np.float64)
    if q.ndim != 2 or q.shape[1] != model.dim:
        raise DimensionMismatchError(
            f"queries must be (n, {model.dim}), got {q.shape}")
    scores = np.zeros((len(q), model.num_classes))
    for i, tree in enumerate(model.trees):
        scores[:, i % model.num_classes] += model.shrinkage * _tree_apply(tree, q)
    return scores


def predict_gbt(model: GbtModel, queries: np.ndarray) -> np.ndarray:
    return decision_scores(model, queries).argmax(axis=1)
