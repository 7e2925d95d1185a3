"""Stratified k-fold cross-validation and exhaustive grid search.

Selection runs only on the training partition: each grid point is trained
on k-1 folds and scored on the held-out fold, the point with the highest
mean accuracy wins (exact argmax), and the winner is refit on the full
training partition. Ties are broken by a documented per-head simplicity
order, then by the lexicographic order of the parameter dict.

Simplicity orders (first element wins a tie):
  knn:    larger k (fewer effective degrees of freedom)
  svm:    linear before rbf, then smaller C, then smaller gamma
  forest: fewer trees, then shallower depth (unlimited counts as deepest)
  gbt:    fewer rounds, then shallower depth, then smaller shrinkage
"""

from __future__ import annotations

import csv
import io
import itertools
import json
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from hemoclass.classifiers import TrainedHead, predict_head, train_head
from hemoclass.errors import ConfigError, TrainingError

log = logging.getLogger(__name__)

DEFAULT_FOLDS = 5


def kfold_indices(labels, k: int, seed: int, class_names=None):
    """Split sample indices into k stratified folds.

    Every class contributes floor(m/k) samples to each fold; the remainder
    goes to consecutive folds starting where the previous class stopped, so
    total fold sizes stay within one sample of each other. Per-class order
    is shuffled by the seed.
    """
    y = np.asarray(labels, dtype=np.int64)
    if k < 2:
        raise ConfigError(f"fold count must be >= 2, got {k}")
    rng = np.random.default_rng(seed)
    folds = [[] for _ in range(k)]
    offset = 0
    for c in np.unique(y):
        pool = np.flatnonzero(y == c)
        if len(pool) < k:
            name = (class_names[c] if class_names is not None else str(c))
            raise ConfigError(
                f"class {name!r} has only {len(pool)} samples, "
                f"fewer than the {k} folds requested")
        rng.shuffle(pool)
        base, rem = divmod(len(pool), k)
        start = 0
        for f in range(k):
            take = base + (1 if (f - offset) % k < rem else 0)
            folds[f].extend(pool[start : start + take].tolist())
            start += take
        offset = (offset + rem) % k
    return [np.asarray(sorted(f), dtype=np.int64) for f in folds]


@dataclass(frozen=True)
class GridSpec:
    """Hyperparameter grid for one head kind."""

    head: str
    axes: dict                   # name -> list of values
    folds: int = DEFAULT_FOLDS
    seed: int = 0

    def points(self) -> list[dict]:
        """Cartesian product, with irrelevant axes dropped and deduplicated
        (a linear-kernel SVM ignores gamma, so those points collapse)."""
        names = sorted(self.axes)
        seen = set()
        out = []
        for combo in itertools.product(*(self.axes[n] for n in names)):
            point = dict(zip(names, combo))
            if self.head == "svm" and point.get("kernel") == "linear":
                point.pop("gamma", None)
            key = json.dumps(point, sort_keys=True)
            if key not in seen:
                seen.add(key)
                out.append(point)
        if not out:
            raise ConfigError(f"empty hyperparameter grid for {self.head}")
        return out


def default_grid(head: str, feature_dim: int, folds: int = DEFAULT_FOLDS,
                 seed: int = 0) -> GridSpec:
    if head == "knn":
        axes = {"k": [1, 3, 5, 7, 9, 11]}
    elif head == "svm":
        axes = {"kernel": ["linear", "rbf"], "C": [0.1, 1.0, 10.0, 100.0],
                "gamma": [1.0 / feature_dim, 0.001, 0.01, 0.1]}
    elif head == "forest":
        axes = {"trees": [100, 300], "depth": [8, 16, None]}
    elif head == "gbt":
        axes = {"rounds": [100, 300], "shrinkage": [0.1, 0.3],
                "depth": [3, 6], "l2": [1.0]}
    else:
        raise ConfigError(f"unknown head kind {head!r}")
    return GridSpec(head=head, axes=axes, folds=folds, seed=seed)


def load_grid_file(path, head: str, folds: int = DEFAULT_FOLDS,
                   seed: int = 0) -> GridSpec:
    """Read a TOML or JSON grid document keyed by head kind.

    Depth-like axes may use null (JSON) or a value <= 0 to mean unlimited.
    """
    path = Path(path)
    text = path.read_text()
    if path.suffix.lower() == ".json":
        doc = json.loads(text)
    else:
        try:
            import tomllib
        except ModuleNotFoundError:      # Python < 3.11
            import tomli as tomllib
        doc = tomllib.loads(text)
    if head not in doc:
        raise ConfigError(f"grid file {path} has no section for {head!r}; "
                          f"sections: {sorted(doc)}")
    axes = {}
    for name, values in doc[head].items():
        if not isinstance(values, list):
            values = [values]
        if name == "depth":
            values = [None if (v is None or (isinstance(v, (int, float))
                                             and v <= 0)) else int(v)
                      for v in values]
        axes[name] = values
    return GridSpec(head=head, axes=axes, folds=folds, seed=seed)


def _simplicity_key(head: str, point: dict):
    unlimited = math.inf
    if head == "knn":
        return (-point["k"],)
    if head == "svm":
        return (0 if point.get("kernel", "linear") == "linear" else 1,
                point["C"], point.get("gamma", 0.0))
    if head == "forest":
        depth = point.get("depth")
        return (point["trees"], unlimited if depth is None else depth)
    depth = point.get("depth")
    return (point["rounds"], unlimited if depth is None else depth,
            point.get("shrinkage", 0.0))


def _lex_key(point: dict) -> str:
    return json.dumps(point, sort_keys=True)


@dataclass(frozen=True)
class GridPointResult:
    point: dict
    fold_accuracies: tuple       # empty if the point failed
    mean_accuracy: float         # nan if the point failed
    rank: int                    # 0 for failed points
    error: str | None = None


@dataclass(frozen=True)
class CvResult:
    head: str
    folds: int
    seed: int
    points: tuple                # GridPointResult per grid point, grid order
    chosen: dict
    chosen_mean_accuracy: float
    model: TrainedHead

    def to_csv_bytes(self) -> bytes:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["head", "point"]
                        + [f"fold_{i}" for i in range(self.folds)]
                        + ["mean_accuracy", "rank", "chosen", "error"])
        for res in self.points:
            accs = [f"{a:.10f}" for a in res.fold_accuracies]
            accs += [""] * (self.folds - len(accs))
            writer.writerow(
                [self.head, _lex_key(res.point)] + accs
                + ["" if math.isnan(res.mean_accuracy)
                   else f"{res.mean_accuracy:.10f}",
                   res.rank or "",
                   "yes" if res.point == self.chosen else "",
                   res.error or ""])
        return buf.getvalue().encode("utf-8")


def _evaluate_point(head, x, y, point, fold_sets, seed, num_classes):
    accs = []
    for val_idx in fold_sets:
        mask = np.ones(len(y), dtype=bool)
        mask[val_idx] = False
        model = train_head(head, x[mask], y[mask], point, seed=seed,
                           num_classes=num_classes)
        pred = predict_head(model, x[val_idx])
        accs.append(float((pred == y[val_idx]).mean()))
    return accs


def grid_search(x: np.ndarray, y: np.ndarray, grid: GridSpec,
                num_classes: int | None = None, jobs: int = 1,
                class_names=None) -> CvResult:
    """Evaluate every grid point with stratified k-fold CV and refit the best."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    if num_classes is None:
        num_classes = int(y.max()) + 1
    folds = kfold_indices(y, grid.folds, grid.seed, class_names=class_names)
    points = grid.points()

    def run_point(point):
        try:
            return _evaluate_point(grid.head, x, y, point, folds,
                                   grid.seed, num_classes), None
        except Exception as exc:  # noqa: BLE001 - failed points are reported
            log.warning("grid point %s failed: %s", _lex_key(point), exc)
            return None, f"{type(exc).__name__}: {exc}"

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            outcomes = list(pool.map(run_point, points))
    else:
        outcomes = [run_point(p) for p in points]

    scored = []
    for point, (accs, error) in zip(points, outcomes):
        if error is None:
            scored.append((point, accs, float(np.mean(accs)), None))
        else:
            scored.append((point, (), float("nan"), error))

    ok = [s for s in scored if s[3] is None]
    if not ok:
        raise TrainingError(
            "every grid point failed; first error: " + scored[0][3])
    order = sorted(ok, key=lambda s: (-s[2], _simplicity_key(grid.head, s[0]),
                                      _lex_key(s[0])))
    ranks = {_lex_key(s[0]): i + 1 for i, s in enumerate(order)}
    chosen_point, _, chosen_mean, _ = order[0]

    model = train_head(grid.head, x, y, chosen_point, seed=grid.seed,
                       num_classes=num_classes)
    model.metadata.update({
        "cv_mean_accuracy": chosen_mean,
        "cv_folds": grid.folds,
        "cv_seed": grid.seed,
    })
    results = tuple(
        GridPointResult(point=point, fold_accuracies=tuple(accs),
                        mean_accuracy=mean,
                        rank=ranks.get(_lex_key(point), 0), error=error)
        for point, accs, mean, error in scored)
    return CvResult(head=grid.head, folds=grid.folds, seed=grid.seed,
                    points=results, chosen=chosen_point,
                    chosen_mean_accuracy=chosen_mean, model=model)
