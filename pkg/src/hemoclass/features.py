"""Feature matrices and the FEATB binary container.

FEATB layout (all integers little-endian):
  magic  b"FEAT"
  u32    version (1)
  u32    N rows
  u32    D feature dimension
  u32    K class count
  f32    N x D values, row-major
  u16    N labels
  u32    metadata byte length
  bytes  UTF-8 JSON metadata (provenance)

The byte layout is a contract: writing and re-reading must be bit-exact.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from hemoclass.errors import SchemaError

MAGIC = b"FEAT"
VERSION = 1


@dataclass
class FeatureMatrix:
    """N x D float32 feature vectors with labels and provenance."""

    values: np.ndarray          # (N, D) float32
    labels: np.ndarray          # (N,) integer class indices
    num_classes: int
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        self.values = np.ascontiguousarray(self.values, dtype=np.float32)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.values.ndim != 2:
            raise SchemaError(f"feature values must be 2-D, got {self.values.ndim}-D")
        if len(self.labels) != self.values.shape[0]:
            raise SchemaError("label count does not match feature rows")
        if not np.all(np.isfinite(self.values)):
            raise SchemaError("feature values must be finite")
        if self.labels.size and (self.labels.min() < 0
                                 or self.labels.max() >= self.num_classes):
            raise SchemaError("labels out of class range")

    @property
    def n_rows(self) -> int:
        return self.values.shape[0]

    @property
    def dim(self) -> int:
        return self.values.shape[1]


def write_featb(features: FeatureMatrix, path) -> None:
    meta = json.dumps(features.provenance, sort_keys=True,
                      separators=(",", ":")).encode("utf-8")
    n, d = features.values.shape
    if n >= 1 << 32 or d >= 1 << 32:
        raise SchemaError("feature matrix too large for FEATB")
    if features.labels.size and features.labels.max() >= 1 << 16:
        raise SchemaError("labels exceed u16 range")
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<IIII", VERSION, n, d, features.num_classes))
        fh.write(np.ascontiguousarray(features.values, dtype="<f4").tobytes())
        fh.write(features.labels.astype("<u2").tobytes())
        fh.write(struct.pack("<I", len(meta)))
        fh.write(meta)


def read_featb(path) -> FeatureMatrix:
    data = Path(path).read_bytes()
    if data[:4] != MAGIC:
        raise SchemaError(f"{path} is not a FEATB file (bad magic)")
    version, n, d, k = struct.unpack_from("<IIII", data, 4)
    if version != VERSION:
        raise SchemaError(f"unsupported FEATB version {version}")
    pos = 20
    values_len = n * d * 4
    values = np.frombuffer(data, dtype="<f4", count=n * d, offset=pos).reshape(n, d)
    pos += values_len
    labels = np.frombuffer(data, dtype="<u2", count=n, offset=pos).astype(np.int64)
    pos += n * 2
    (meta_len,) = struct.unpack_from("<I", data, pos)
    pos += 4
    if pos + meta_len != len(data):
        raise SchemaError(f"{path} has trailing or missing bytes")
    meta = json.loads(data[pos : pos + meta_len].decode("utf-8")) if meta_len else {}
    return FeatureMatrix(values=values.copy(), labels=labels,
                         num_classes=k, provenance=meta)


def file_sha256(path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()
