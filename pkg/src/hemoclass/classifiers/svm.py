"""One-vs-one soft-margin SVM trained by sequential minimal optimization.

Each of the K(K-1)/2 binary sub-problems minimizes the standard dual

    W(a) = 1/2 * sum_ij a_i a_j y_i y_j K(x_i, x_j) - sum_i a_i
    s.t.  0 <= a_i <= C,  sum_i a_i y_i = 0

by repeatedly optimizing the maximal-KKT-violating pair (the working-set
selection of Keerthi et al. / LIBSVM's first-order rule). Convergence is
declared when the duality-gap surrogate m(a) - M(a) drops below the
tolerance; a hard cap on pair updates guards against stalls.
"""

from __future__ import annotations

import logging
from collections import OrderedDict
from dataclasses import dataclass, field

import numpy as np

from hemoclass.errors import ConfigError, DimensionMismatchError, TrainingError

log = logging.getLogger(__name__)

KKT_TOLERANCE = 1e-3
MAX_PAIR_UPDATES = 10_000
CACHE_ROWS = 2000
_TAU = 1e-12


@dataclass(frozen=True)
class Kernel:
    """Kernel specification: 'linear' or 'rbf' with bandwidth gamma."""

    kind: str
    gamma: float | None = None

    def __post_init__(self):
        if self.kind not in ("linear", "rbf"):
            raise ConfigError(f"unknown kernel kind {self.kind!r}")
        if self.kind == "rbf":
            if self.gamma is None or self.gamma <= 0:
                raise ConfigError("rbf kernel requires gamma > 0")

    def cross(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        """Kernel matrix between row sets a (n,D) and b (m,D)."""
        if self.kind == "linear":
            return a @ b.T
        sq = (np.sum(a * a, axis=1)[:, None] + np.sum(b * b, axis=1)[None, :]
              - 2.0 * (a @ b.T))
        np.maximum(sq, 0.0, out=sq)
        return np.exp(-self.gamma * sq)


class _RowCache:
    """LRU cache of kernel rows K(x_i, X) keyed by training index."""

    def __init__(self, x: np.ndarray, kernel: Kernel, capacity: int):
        self.x = x
        self.kernel = kernel
        self.capacity = max(1, capacity)
        self.rows: OrderedDict[int, np.ndarray] = OrderedDict()

    def row(self, i: int) -> np.ndarray:
        hit = self.rows.get(i)
        if hit is not None:
            self.rows.move_to_end(i)
            return hit
        row = self.kernel.cross(self.x[i : i + 1], self.x)[0]
        self.rows[i] = row
        if len(self.rows) > self.capacity:
            self.rows.popitem(last=False)
        return row


@dataclass(frozen=True)
class BinaryProblem:
    """Solved sub-problem separating class_pos (sign +1) from class_neg."""

    class_pos: int
    class_neg: int
    support_x: np.ndarray       # (n_sv, D)
    dual_coef: np.ndarray       # (n_sv,) alpha_i * y_i
    bias: float

    def decision(self, kernel: Kernel, q: np.ndarray) -> np.ndarray:
        if len(self.support_x) == 0:
            return np.full(len(q), self.bias)
        return kernel.cross(q, self.support_x) @ self.dual_coef + self.bias


@dataclass(frozen=True)
class SvmModel:
    kernel: Kernel
    c: float
    num_classes: int
    problems: tuple = field(default_factory=tuple)
    dim: int = 0


def _smo_solve(x: np.ndarray, y: np.ndarray, c: float, kernel: Kernel,
               tol: float = KKT_TOLERANCE,
               max_updates: int = MAX_PAIR_UPDATES):
    """Solve one binary dual; returns (alpha, bias, pair_updates)."""
    n = len(x)
    alpha = np.zeros(n)
    grad = np.full(n, -1.0)     # gradient of W at alpha = 0
    diag = (np.einsum("ij,ij->i", x, x) if kernel.kind == "linear"
            else np.ones(n))
    cache = _RowCache(x, kernel, min(n, CACHE_ROWS))
    updates = 0
    while updates < max_updates:
        score = -y * grad
        up = ((y > 0) & (alpha < c)) | ((y < 0) & (alpha > 0))
        low = ((y > 0) & (alpha > 0)) | ((y < 0) & (alpha < c))
        if not up.any() or not low.any():
            break
        i = int(np.flatnonzero(up)[np.argmax(score[up])])
        j = int(np.flatnonzero(low)[np.argmin(score[low])])
        if score[i] - score[j] <= tol:
            break
        ki = cache.row(i)
        kj = cache.row(j)
        eta = max(diag[i] + diag[j] - 2.0 * ki[j], _TAU)
        if y[i] != y[j]:
            # both multipliers move together: alpha_i += t, alpha_j += t
            t = -(grad[i] + grad[j]) / eta
            t = min(max(t, -alpha[i], -alpha[j]), c - alpha[i], c - alpha[j])
            d_i, d_j = t, t
        else:
            # opposite moves: alpha_i += t, alpha_j -= t
            t = -(grad[i] - grad[j]) / eta
            t = min(max(t, -alpha[i], alpha[j] - c), c - alpha[i], alpha[j])
            d_i, d_j = t, -t
        if d_i == 0.0 and d_j == 0.0:
            break
        alpha[i] += d_i
        alpha[j] += d_j
        grad += (y * ki) * (y[i] * d_i) + (y * kj) * (y[j] * d_j)
        updates += 1
    else:
        log.warning("SMO hit the %d-update cap before reaching tol %.0e",
                    max_updates, tol)

    score = -y * grad
    up = ((y > 0) & (alpha < c)) | ((y < 0) & (alpha > 0))
    low = ((y > 0) & (alpha > 0)) | ((y < 0) & (alpha < c))
    if up.any() and low.any():
        bias = 0.5 * (score[up].max() + score[low].min())
    else:
        bias = float(score.mean())
    return alpha, float(bias), updates


def kkt_violation(alpha: np.ndarray, grad: np.ndarray, y: np.ndarray,
                  c: float) -> float:
    """Largest m(a) - M(a) gap; <= 0 means the KKT conditions hold exactly."""
    score = -y * grad
    up = ((y > 0) & (alpha < c)) | ((y < 0) & (alpha > 0))
    low = ((y > 0) & (alpha > 0)) | ((y < 0) & (alpha < c))
    if not up.any() or not low.any():
        return 0.0
    return float(score[up].max() - score[low].min())


def dual_objective(alpha: np.ndarray, y: np.ndarray, gram: np.ndarray) -> float:
    """Value of the maximization form: sum(a) - 1/2 (ay)' K (ay)."""
    ay = alpha * y
    return float(alpha.sum() - 0.5 * ay @ gram @ ay)


def train_svm(x: np.ndarray, y: np.ndarray, c: float, kernel: Kernel,
              num_classes: int | None = None) -> SvmModel:
    x = np.ascontiguousarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    if c <= 0:
        raise ConfigError(f"C must be positive, got {c}")
    classes = np.unique(y)
    if len(classes) < 2:
        raise TrainingError("SVM training requires at least 2 classes")
    if num_classes is None:
        num_classes = int(classes.max()) + 1
    problems = []
    for a_idx in range(len(classes)):
        for b_idx in range(a_idx + 1, len(classes)):
            ca, cb = int(classes[a_idx]), int(classes[b_idx])
            mask = (y == ca) | (y == cb)
            sub_x = x[mask]
            sub_y = np.where(y[mask] == ca, 1.0, -1.0)
            alpha, bias, _ = _smo_solve(sub_x, sub_y, c, kernel)
            sv = alpha > 0
            problems.append(BinaryProblem(
                class_pos=ca, class_neg=cb,
                support_x=sub_x[sv].copy(),
                dual_coef=(alpha[sv] * sub_y[sv]),
                bias=bias,
            ))
    return SvmModel(kernel=kernel, c=float(c), num_classes=num_classes,
                    problems=tuple(problems), dim=x.shape[1])


def predict_svm(model: SvmModel, queries: np.ndarray) -> np.ndarray:
    q = np.asarray(queries, dtype=np.float64)
    if q.ndim != 2 or q.shape[1] != model.dim:
        raise DimensionMismatchError(
            f"queries must be (n, {model.dim}), got {q.shape}")
    votes = np.zeros((len(q), model.num_classes), dtype=np.int64)
    for prob in model.problems:
        dec = prob.decision(model.kernel, q)
        pos = dec >= 0.0          # exact zero favors the lower class index
        votes[pos, prob.class_pos] += 1
        votes[~pos, prob.class_neg] += 1
    # argmax picks the first maximum, i.e. the lowest class index on a tie
    return votes.argmax(axis=1)
