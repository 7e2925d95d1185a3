"""Trained-head wrapper and its versioned binary container.

Container layout (little-endian):
  magic   b"HEAD"
  u32     format version (1)
  u32     head kind (1=knn, 2=svm, 3=forest, 4=gbt)
  u32     has_standardizer flag, then the standardizer block if set
  ...     head-specific payload
  u32     metadata byte length + UTF-8 JSON metadata
  32B     SHA-256 over every preceding byte

Serialization is canonical, so write -> read -> write reproduces the file
byte for byte.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from hemoclass.classifiers.forest import ForestModel, Tree, predict_forest, train_forest
from hemoclass.classifiers.gbt import GbtModel, RegressionTree, predict_gbt, train_gbt
from hemoclass.classifiers.knn import KnnModel, predict_knn, train_knn
from hemoclass.classifiers.standardize import Standardizer, fit_standardizer
from hemoclass.classifiers.svm import (
    BinaryProblem,
    Kernel,
    SvmModel,
    predict_svm,
    train_svm,
)
from hemoclass.errors import ConfigError, SchemaError

MAGIC = b"HEAD"
VERSION = 1
_KIND_TAGS = {"knn": 1, "svm": 2, "forest": 3, "gbt": 4}
_TAG_KINDS = {v: k for k, v in _KIND_TAGS.items()}

HEAD_KINDS = ("knn", "svm", "forest", "gbt")
STANDARDIZED_KINDS = ("knn", "svm")    # trees split on raw features
_KNOWN_PARAMS = {
    "knn": {"k"},
    "svm": {"C", "kernel", "gamma"},
    "forest": {"trees", "depth"},
    "gbt": {"rounds", "shrinkage", "depth", "l2"},
}


@dataclass
class TrainedHead:
    """A fitted classifier head plus its input scaling and provenance."""

    kind: str
    model: object
    standardizer: Standardizer | None
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in HEAD_KINDS:
            raise ConfigError(f"unknown head kind {self.kind!r}")
        if self.standardizer is not None \
                and self.standardizer.dim != self.model.dim:
            raise SchemaError(
                f"standardizer dimension {self.standardizer.dim} != "
                f"model dimension {self.model.dim}")

    @property
    def dim(self) -> int:
        return self.model.dim

    @property
    def num_classes(self) -> int:
        return self.model.num_classes


def train_head(kind: str, x: np.ndarray, y: np.ndarray, params: dict,
               seed: int = 0, num_classes: int | None = None) -> TrainedHead:
    """Standardize (where the head wants it), train, and wrap one head.

    params carries the head's hyperparameters by name:
      knn:    k
      svm:    C, kernel ('linear'|'rbf'), gamma (rbf only)
      forest: trees, depth (None = unlimited)
      gbt:    rounds, shrinkage, depth, l2 (default 1.0)
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    if num_classes is None:
        num_classes = int(y.max()) + 1
    allowed = _KNOWN_PARAMS.get(kind)
    if allowed is None:
        raise ConfigError(f"unknown head kind {kind!r}")
    unknown = set(params) - allowed
    if unknown:
        raise ConfigError(
            f"unknown {kind} parameter(s) {sorted(unknown)}; "
            f"expected a subset of {sorted(allowed)}")
    st = None
    if kind in STANDARDIZED_KINDS:
        st = fit_standardizer(x)
        x = st.apply(x)
    if kind == "knn":
        model = train_knn(x, y, k=int(params["k"]), num_classes=num_classes)
    elif kind == "svm":
        kernel = Kernel(params.get("kernel", "linear"),
                        gamma=params.get("gamma"))
        model = train_svm(x, y, c=float(params["C"]), kernel=kernel,
                          num_classes=num_classes)
    elif kind == "forest":
        model = train_forest(x, y, n_trees=int(params["trees"]),
                             max_depth=params.get("depth"), seed=seed,
                             num_classes=num_classes)
    elif kind == "gbt":
        model = train_gbt(x, y, n_rounds=int(params["rounds"]),
                          shrinkage=float(params.get("shrinkage", 0.1)),
                          l2_leaf=float(params.get("l2", 1.0)),
                          max_depth=params.get("depth"),
                          num_classes=num_classes)
    else:
        raise ConfigError(f"unknown head kind {kind!r}")
    meta = {"kind": kind, "params": dict(params), "seed": seed}
    return TrainedHead(kind=kind, model=model, standardizer=st, metadata=meta)


def predict_head(head: TrainedHead, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if head.standardizer is not None:
        x = head.standardizer.apply(x)
    if head.kind == "knn":
        return predict_knn(head.model, x)
    if head.kind == "svm":
        return predict_svm(head.model, x)
    if head.kind == "forest":
        return predict_forest(head.model, x)
    return predict_gbt(head.model, x)


class _Writer:
    def __init__(self):
        self.parts = []

    def u32(self, v):
        self.parts.append(struct.pack("<I", int(v)))

    def i32(self, v):
        self.parts.append(struct.pack("<i", int(v)))

    def u64(self, v):
        self.parts.append(struct.pack("<Q", int(v)))

    def f64(self, v):
        self.parts.append(struct.pack("<d", float(v)))

    def array(self, arr, dtype):
        self.parts.append(np.ascontiguousarray(arr, dtype=dtype).tobytes())

    def blob(self, data: bytes):
        self.u32(len(data))
        self.parts.append(data)

    def bytes(self) -> bytes:
        return b"".join(self.parts)


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def _unpack(self, fmt):
        (v,) = struct.unpack_from(fmt, self.data, self.pos)
        self.pos += struct.calcsize(fmt)
        return v

    def u32(self):
        return self._unpack("<I")

    def i32(self):
        return self._unpack("<i")

    def u64(self):
        return self._unpack("<Q")

    def f64(self):
        return self._unpack("<d")

    def array(self, count, dtype):
        dt = np.dtype(dtype)
        out = np.frombuffer(self.data, dtype=dt, count=count,
                            offset=self.pos).copy()
        self.pos += count * dt.itemsize
        return out

    def blob(self) -> bytes:
        n = self.u32()
        out = self.data[self.pos : self.pos + n]
        self.pos += n
        return out


def _write_depth(w: _Writer, depth):
    w.i32(-1 if depth is None else depth)


def _read_depth(r: _Reader):
    d = r.i32()
    return None if d == -1 else d


def _write_tree(w: _Writer, tree):
    n = len(tree.feature)
    w.u32(n)
    w.array(tree.feature, "<i4")
    w.array(tree.threshold, "<f8")
    w.array(tree.left, "<i4")
    w.array(tree.right, "<i4")
    if isinstance(tree, Tree):
        w.array(tree.label, "<i4")
    else:
        w.array(tree.value, "<f8")


def _read_tree(r: _Reader, regression: bool):
    n = r.u32()
    feature = r.array(n, "<i4")
    threshold = r.array(n, "<f8")
    left = r.array(n, "<i4")
    right = r.array(n, "<i4")
    if regression:
        return RegressionTree(feature=feature, threshold=threshold,
                              left=left, right=right,
                              value=r.array(n, "<f8"))
    return Tree(feature=feature, threshold=threshold, left=left, right=right,
                label=r.array(n, "<i4"))


def _encode_payload(head: TrainedHead, w: _Writer) -> None:
    m = head.model
    if head.kind == "knn":
        n, d = m.train_x.shape
        w.u32(n)
        w.u32(d)
        w.u32(m.num_classes)
        w.u32(m.k)
        w.array(m.train_x, "<f8")
        w.array(m.train_y, "<i8")
    elif head.kind == "svm":
        w.u32(0 if m.kernel.kind == "linear" else 1)
        w.f64(m.kernel.gamma or 0.0)
        w.f64(m.c)
        w.u32(m.num_classes)
        w.u32(m.dim)
        w.u32(len(m.problems))
        for prob in m.problems:
            w.u32(prob.class_pos)
            w.u32(prob.class_neg)
            w.u32(len(prob.dual_coef))
            w.f64(prob.bias)
            w.array(prob.support_x, "<f8")
            w.array(prob.dual_coef, "<f8")
    elif head.kind == "forest":
        w.u32(len(m.trees))
        w.u32(m.num_classes)
        w.u32(m.dim)
        _write_depth(w, m.max_depth)
        w.array(m.tree_seeds, "<u8")
        for tree in m.trees:
            _write_tree(w, tree)
    else:
        w.u32(m.n_rounds)
        w.u32(m.num_classes)
        w.u32(m.dim)
        _write_depth(w, m.max_depth)
        w.f64(m.shrinkage)
        w.f64(m.l2_leaf)
        w.u32(len(m.train_loss))
        w.array(np.asarray(m.train_loss), "<f8")
        w.u32(len(m.trees))
        for tree in m.trees:
            _write_tree(w, tree)


def _decode_payload(kind: str, r: _Reader):
    if kind == "knn":
        n = r.u32()
        d = r.u32()
        k_classes = r.u32()
        k = r.u32()
        x = r.array(n * d, "<f8").reshape(n, d)
        y = r.array(n, "<i8")
        return KnnModel(train_x=x, train_y=y, num_classes=k_classes, k=k)
    if kind == "svm":
        kernel_tag = r.u32()
        gamma = r.f64()
        c = r.f64()
        k_classes = r.u32()
        dim = r.u32()
        kernel = (Kernel("linear") if kernel_tag == 0
                  else Kernel("rbf", gamma=gamma))
        problems = []
        for _ in range(r.u32()):
            class_pos = r.u32()
            class_neg = r.u32()
            n_sv = r.u32()
            bias = r.f64()
            support = r.array(n_sv * dim, "<f8").reshape(n_sv, dim)
            coef = r.array(n_sv, "<f8")
            problems.append(BinaryProblem(class_pos=class_pos,
                                          class_neg=class_neg,
                                          support_x=support, dual_coef=coef,
                                          bias=bias))
        return SvmModel(kernel=kernel, c=c, num_classes=k_classes,
                        problems=tuple(problems), dim=dim)
    if kind == "forest":
        n_trees = r.u32()
        k_classes = r.u32()
        dim = r.u32()
        depth = _read_depth(r)
        seeds = r.array(n_trees, "<u8")
        trees = tuple(_read_tree(r, regression=False) for _ in range(n_trees))
        return ForestModel(trees=trees, tree_seeds=seeds,
                           num_classes=k_classes, dim=dim, max_depth=depth)
    n_rounds = r.u32()
    k_classes = r.u32()
    dim = r.u32()
    depth = _read_depth(r)
    shrinkage = r.f64()
    l2_leaf = r.f64()
    losses = tuple(float(v) for v in r.array(r.u32(), "<f8"))
    trees = tuple(_read_tree(r, regression=True) for _ in range(r.u32()))
    return GbtModel(trees=trees, num_classes=k_classes, dim=dim,
                    n_rounds=n_rounds, shrinkage=shrinkage, l2_leaf=l2_leaf,
                    max_depth=depth, train_loss=losses)


def write_head(head: TrainedHead, path) -> None:
    w = _Writer()
    w.parts.append(MAGIC)
    w.u32(VERSION)
    w.u32(_KIND_TAGS[head.kind])
    if head.standardizer is None:
        w.u32(0)
    else:
        st = head.standardizer
        w.u32(1)
        w.u32(st.dim)
        w.array(st.mean, "<f8")
        w.array(st.sigma, "<f8")
        w.u32(len(st.constant_dims))
        w.array(np.asarray(st.constant_dims, dtype=np.int64), "<i8")
    _encode_payload(head, w)
    w.blob(json.dumps(head.metadata, sort_keys=True,
                      separators=(",", ":")).encode("utf-8"))
    body = w.bytes()
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(body)
        fh.write(hashlib.sha256(body).digest())


def read_head(path) -> TrainedHead:
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) < 44 or data[:4] != MAGIC:
        raise SchemaError(f"{path} is not a model container (bad magic)")
    body, digest = data[:-32], data[-32:]
    if hashlib.sha256(body).digest() != digest:
        raise SchemaError(f"{path} is corrupt (checksum mismatch)")
    r = _Reader(body)
    r.pos = 4
    version = r.u32()
    if version != VERSION:
        raise SchemaError(f"unsupported container version {version}")
    tag = r.u32()
    kind = _TAG_KINDS.get(tag)
    if kind is None:
        raise SchemaError(f"unknown head kind tag {tag}")
    st = None
    if r.u32():
        dim = r.u32()
        mean = r.array(dim, "<f8")
        sigma = r.array(dim, "<f8")
        const = tuple(int(v) for v in r.array(r.u32(), "<i8"))
        st = Standardizer(mean=mean, sigma=sigma, constant_dims=const)
    model = _decode_payload(kind, r)
    meta = json.loads(r.blob().decode("utf-8"))
    if r.pos != len(body):
        raise SchemaError(f"{path} has unexpected trailing bytes")
    return TrainedHead(kind=kind, model=model, standardizer=st, metadata=meta)
