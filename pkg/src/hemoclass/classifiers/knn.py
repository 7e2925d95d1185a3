"""k-nearest-neighbor classification with Euclidean distance.

Votes are taken over the k nearest training points. Ties are broken by the
smaller summed distance of the tied classes' neighbors, then by the lower
class index. Neighbor selection is stable: equal distances resolve to the
lower training-row index.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from hemoclass.errors import ConfigError, DimensionMismatchError

_QUERY_CHUNK = 256


@dataclass(frozen=True)
class KnnModel:
    train_x: np.ndarray     # (n, D) float64
    train_y: np.ndarray     # (n,) int64
    num_classes: int
    k: int

    @property
    def dim(self) -> int:
        return self.train_x.shape[1]


def train_knn(x: np.ndarray, y: np.ndarray, k: int,
              num_classes: int | None = None) -> KnnModel:
    x = np.ascontiguousarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    if len(x) != len(y):
        raise ConfigError("feature rows and labels disagree in length")
    if k < 1 or k > len(x):
        raise ConfigError(f"k={k} must satisfy 1 <= k <= n_train={len(x)}")
    if num_classes is None:
        num_classes = int(y.max()) + 1
    return KnnModel(train_x=x, train_y=y, num_classes=num_classes, k=k)


def _vote(labels: np.ndarray, dists: np.ndarray, num_classes: int) -> int:
    counts = np.bincount(labels, minlength=num_classes)
    best = counts.max()
    candidates = np.flatnonzero(counts == best)
    if len(candidates) == 1:
        return int(candidates[0])
    sums = np.array([dists[labels == c].sum() for c in candidates])
    # argmin returns the first minimum, i.e. the lowest class index on a tie
    return int(candidates[np.argmin(sums)])


def predict_knn(model: KnnModel, queries: np.ndarray) -> np.ndarray:
    q = np.asarray(queries, dtype=np.float64)
    if q.ndim != 2 or q.shape[1] != model.dim:
        raise DimensionMismatchError(
            f"queries must be (n, {model.dim}), got {q.shape}")
    out = np.empty(len(q), dtype=np.int64)
    for start in range(0, len(q), _QUERY_CHUNK):
        chunk = q[start:start + _QUERY_CHUNK]
        # difference form keeps the arithmetic identical across chunk sizes
        sq = ((chunk[:, None, :] - model.train_x[None, :, :]) ** 2).sum(axis=2)
        order = np.argsort(sq, axis=1, kind="stable")[:, :model.k]
        for i in range(len(chunk)):
            idx = order[i]
            out[start + i] = _vote(model.train_y[idx], np.sqrt(sq[i, idx]),
                                   model.num_classes)
    return out
