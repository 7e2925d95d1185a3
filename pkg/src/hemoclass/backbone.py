"""Frozen convolutional backbone: ONNX loading and feature extraction.

The backbone is any ONNX graph with a single image input and two declared
outputs: a feature vector (the penultimate activation) and class logits.
Only inference is performed here; training/export tooling lives elsewhere.
"""

from __future__ import annotations

import hashlib
import logging
from dataclasses import dataclass

import numpy as np

from hemoclass.errors import InferenceError, SchemaError
from hemoclass.onnx import GraphExecutor, Model, load_model

log = logging.getLogger(__name__)

FEATURE_OUTPUT = "features"
LOGITS_OUTPUT = "logits"
DEFAULT_BATCH_SIZE = 64


@dataclass
class Backbone:
    """A loaded ONNX backbone plus its inferred dimensions and identity."""

    model: Model
    executor: GraphExecutor
    input_name: str
    feature_dim: int
    num_classes: int
    sha256: str

    def run_batch(self, batch: np.ndarray, outputs=(FEATURE_OUTPUT,)) -> dict:
        """Run one NCHW float32 batch and return the requested outputs."""
        if batch.ndim != 4 or batch.shape[1] != 3:
            raise InferenceError(f"expected NCHW batch with 3 channels, "
                                 f"got shape {batch.shape}")
        return self.executor.run({self.input_name: batch}, outputs=list(outputs))


def _static_dim(model: Model, name: str) -> int:
    for vi in model.graph.outputs:
        if vi.name == name:
            dims = vi.dims
            if not dims or not isinstance(dims[-1], int):
                raise SchemaError(f"output {name!r} has no static last dimension")
            return dims[-1]
    raise SchemaError(
        f"backbone is missing required output {name!r}; "
        f"declared outputs: {[vi.name for vi in model.graph.outputs]}"
    )


def load_backbone(path) -> Backbone:
    """Load an ONNX backbone and infer (feature_dim, num_classes) from it."""
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            digest.update(chunk)
    model = load_model(path)
    executor = GraphExecutor(model)
    if len(executor.input_names) != 1:
        raise SchemaError(f"backbone must have exactly one input, "
                          f"got {executor.input_names}")
    feature_dim = _static_dim(model, FEATURE_OUTPUT)
    num_classes = _static_dim(model, LOGITS_OUTPUT)
    log.info("loaded backbone %s: D=%d, K=%d, sha256=%s",
             path, feature_dim, num_classes, digest.hexdigest()[:12])
    return Backbone(model=model, executor=executor,
                    input_name=executor.input_names[0],
                    feature_dim=feature_dim, num_classes=num_classes,
                    sha256=digest.hexdigest())


def extract_features(backbone: Backbone, tensors,
                     batch_size: int = DEFAULT_BATCH_SIZE) -> np.ndarray:
    """Extract feature vectors for an iterable of CHW float32 tensors.

    Row order follows input order regardless of batching.
    """
    if batch_size < 1:
        raise InferenceError("batch_size must be >= 1")
    rows = []
    pending = []

    def flush():
        if not pending:
            return
        batch = np.stack(pending, axis=0)
        out = backbone.run_batch(batch, outputs=(FEATURE_OUTPUT,))
        feats = out[FEATURE_OUTPUT]
        if feats.shape != (len(pending), backbone.feature_dim):
            raise InferenceError(f"feature output has shape {feats.shape}, "
                                 f"expected ({len(pending)}, {backbone.feature_dim})")
        rows.append(np.asarray(feats, dtype=np.float32))
        pending.clear()

    for tensor in tensors:
        pending.append(tensor)
        if len(pending) == batch_size:
            flush()
    flush()
    if not rows:
        return np.zeros((0, backbone.feature_dim), dtype=np.float32)
    return np.concatenate(rows, axis=0)


def softmax(logits: np.ndarray) -> np.ndarray:
    """Row-wise softmax with max subtraction for numerical stability."""
    z = np.asarray(logits, dtype=np.float64)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def cross_entropy(probs: np.ndarray, labels: np.ndarray) -> float:
    """Mean negative log-likelihood of the true class, clamped at 1e-12."""
    p = np.asarray(probs, dtype=np.float64)
    y = np.asarray(labels, dtype=np.int64)
    picked = np.clip(p[np.arange(len(y)), y], 1e-12, None)
    return float(-np.log(picked).mean())
