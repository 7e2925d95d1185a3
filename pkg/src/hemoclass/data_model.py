"""Dataset ingestion and the reproducible stratified split protocol.

A manifest indexes a class-per-directory image tree.  Splits draw a
fixed-size test set first (so it is identical across all training
fractions for a given seed), then a per-class floor(fraction * size)
training set; everything left is validation.  All draws use seeded
per-class PCG64 shuffles, recorded in the plan so runs are auditable.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path, PurePosixPath

import numpy as np
from PIL import Image, UnidentifiedImageError

from hemoclass.errors import ConfigError, DataError

log = logging.getLogger(__name__)

IMAGE_SUFFIXES = {".jpg", ".jpeg", ".png", ".bmp", ".tif", ".tiff"}

RNG_ALGORITHM = "numpy-pcg64-per-class-shuffle-v1"


@dataclass(frozen=True)
class DatasetManifest:
    """Class-labeled image inventory; the index space for all splits."""

    class_names: tuple[str, ...]
    entries: tuple[tuple[str, int], ...]  # (relative POSIX path, label index)

    def __post_init__(self):
        k = len(self.class_names)
        if k < 2:
            raise DataError(f"need >=2 classes, got {k}")
        if not self.entries:
            raise DataError("manifest has no entries")
        if any(not (0 <= label < k) for _, label in self.entries):
            raise DataError("manifest entry label out of range")
        paths = [p for p, _ in self.entries]
        if len(set(paths)) != len(paths):
            raise DataError("manifest paths are not unique")

    @property
    def num_classes(self) -> int:
        return len(self.class_names)

    def labels(self) -> np.ndarray:
        return np.array([label for _, label in self.entries], dtype=np.int64)

    def class_sizes(self) -> np.ndarray:
        return np.bincount(self.labels(), minlength=self.num_classes)

    def to_csv_bytes(self) -> bytes:
        """Canonical CSV form; its SHA-256 is the manifest identity."""
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["path", "label"])
        for path, label in self.entries:
            writer.writerow([path, self.class_names[label]])
        return buf.getvalue().encode("utf-8")

    def sha256(self) -> str:
        return hashlib.sha256(self.to_csv_bytes()).hexdigest()


@dataclass(frozen=True)
class SplitSpec:
    train_fraction: float
    test_count: int
    seed: int

    def __post_init__(self):
        if not 0.0 < self.train_fraction <= 1.0:
            raise ConfigError(
                f"train_fraction must be in (0, 1], got {self.train_fraction}")
        if self.test_count < 0:
            raise ConfigError(f"test_count must be >= 0, got {self.test_count}")


@dataclass
class SplitPlan:
    spec: SplitSpec
    train_indices: tuple[int, ...]
    val_indices: tuple[int, ...]
    test_indices: tuple[int, ...]
    per_class_train_counts: tuple[int, ...]
    manifest_sha256: str
    rng_algorithm: str = RNG_ALGORITHM

    def sha256(self) -> str:
        return hashlib.sha256(self.to_json_bytes()).hexdigest()

    def to_json_bytes(self) -> bytes:
        doc = {
            "format": "hemoclass-split-plan",
            "version": 1,
            "spec": {
                "train_fraction": self.spec.train_fraction,
                "test_count": self.spec.test_count,
                "seed": self.spec.seed,
            },
            "rng_algorithm": self.rng_algorithm,
            "manifest_sha256": self.manifest_sha256,
            "per_class_train_counts": list(self.per_class_train_counts),
            "train_indices": list(self.train_indices),
            "val_indices": list(self.val_indices),
            "test_indices": list(self.test_indices),
        }
        return (json.dumps(doc, indent=None, separators=(",", ":")) + "\n").encode()


@dataclass
class IngestResult:
    manifest: DatasetManifest
    skipped: list[str] = field(default_factory=list)

    @property
    def warning_count(self) -> int:
        return len(self.skipped)


@dataclass
class SplitVerification:
    passed: bool
    issues: list[str]
    warnings: list[str]
    counts: dict[str, list[int]]  # partition name -> per-class counts

    def counts_table(self, class_names) -> str:
        lines = ["partition," + ",".join(class_names) + ",total"]
        for part in ("train", "val", "test"):
            row = self.counts[part]
            lines.append(f"{part}," + ",".join(str(c) for c in row) + f",{sum(row)}")
        return "\n".join(lines)


# ---------------------------------------------------------------------------
# Ingestion
# ---------------------------------------------------------------------------

def _probe_image(path: Path) -> bool:
    try:
        with Image.open(path) as img:
            img.verify()
        return True
    except (UnidentifiedImageError, OSError, ValueError):
        return False


def ingest_directory(root_path) -> IngestResult:
    """Build a manifest from a directory with one subdirectory per class.

    Class names sort lexicographically and entries sort by (label, path),
    so two scans of the same tree produce the identical manifest.
    Undecodable files are skipped and reported, an empty class directory
    is an error.
    """
    root = Path(root_path)
    if not root.is_dir():
        raise DataError(f"dataset root {root} is not a directory")
    class_dirs = sorted(
        d for d in root.iterdir() if d.is_dir() and not d.name.startswith(".")
    )
    if len(class_dirs) < 2:
        raise DataError(f"need >=2 classes under {root}, found {len(class_dirs)}")

    class_names = tuple(d.name for d in class_dirs)
    entries: list[tuple[str, int]] = []
    skipped: list[str] = []
    for label, class_dir in enumerate(class_dirs):
        kept = 0
        for file in sorted(class_dir.rglob("*")):
            if not file.is_file() or file.suffix.lower() not in IMAGE_SUFFIXES:
                continue
            rel = str(PurePosixPath(file.relative_to(root).as_posix()))
            if not _probe_image(file):
                skipped.append(rel)
                log.warning("skipping unreadable image %s", rel)
                continue
            entries.append((rel, label))
            kept += 1
        if kept == 0:
            raise DataError(f"class directory {class_dir.name!r} has no decodable images")

    entries.sort(key=lambda e: (e[1], e[0]))
    return IngestResult(DatasetManifest(class_names, tuple(entries)), skipped)


# ---------------------------------------------------------------------------
# Split protocol
# ---------------------------------------------------------------------------

def _test_allocation(class_sizes: np.ndarray, test_count: int) -> np.ndarray:
    """Per-class test counts: proportional rounding, then +-1 adjustments
    applied to the largest classes until the total is exactly test_count."""
    total = int(class_sizes.sum())
    if test_count > total:
        raise ConfigError(f"test_count {test_count} exceeds dataset size {total}")
    quota = test_count * class_sizes / total
    counts = np.floor(quota + 0.5).astype(np.int64)  # round half up
    by_size = sorted(range(len(class_sizes)),
                     key=lambda c: (-int(class_sizes[c]), c))
    delta = test_count - int(counts.sum())
    step = 1 if delta > 0 else -1
    i = 0
    while delta != 0:
        c = by_size[i % len(by_size)]
        candidate = counts[c] + step
        if 0 <= candidate <= class_sizes[c]:
            counts[c] = candidate
            delta -= step
        i += 1
    return counts


def make_split(manifest: DatasetManifest, spec: SplitSpec) -> SplitPlan:
    """Draw test/train/validation index partitions.

    Test indices are drawn first so the test set depends only on
    (manifest, seed, test_count) and is shared across all training
    fractions.  Train counts are floor(train_fraction * class_size).
    """
    sizes = manifest.class_sizes()
    total = int(sizes.sum())
    if spec.train_fraction * total + spec.test_count > total + 1e-9:
        raise ConfigError(
            f"infeasible spec: train_fraction {spec.train_fraction} x {total} images "
            f"+ test_count {spec.test_count} exceeds the dataset")
    if np.any(sizes == 0):
        empty = manifest.class_names[int(np.argmin(sizes))]
        raise ConfigError(f"class {empty!r} has no entries")

    test_counts = _test_allocation(sizes, spec.test_count)
    labels = manifest.labels()

    train: list[int] = []
    val: list[int] = []
    test: list[int] = []
    train_counts: list[int] = []
    rng = np.random.Generator(np.random.PCG64(spec.seed))
    for c in range(manifest.num_classes):
        pool = np.flatnonzero(labels == c)
        rng.shuffle(pool)
        n_test = int(test_counts[c])
        # The epsilon guards against IEEE representation error flipping an
        # exact product (e.g. 0.3 * 1420) just below its integer value.
        n_train = int(np.floor(spec.train_fraction * sizes[c] + 1e-9))
        if n_test + n_train > sizes[c]:
            raise ConfigError(
                f"infeasible spec: class {manifest.class_names[c]!r} has {sizes[c]} "
                f"images but needs {n_test} test + {n_train} train")
        test.extend(int(i) for i in pool[:n_test])
        train.extend(int(i) for i in pool[n_test : n_test + n_train])
        val.extend(int(i) for i in pool[n_test + n_train :])
        train_counts.append(n_train)

    return SplitPlan(
        spec=spec,
        train_indices=tuple(sorted(train)),
        val_indices=tuple(sorted(val)),
        test_indices=tuple(sorted(test)),
        per_class_train_counts=tuple(train_counts),
        manifest_sha256=manifest.sha256(),
    )


def verify_split(plan: SplitPlan, manifest: DatasetManifest) -> SplitVerification:
    """Check disjointness, coverage, test size and bounds; tabulate counts."""
    issues: list[str] = []
    warnings: list[str] = []
    n = len(manifest.entries)
    parts = {
        "train": plan.train_indices,
        "val": plan.val_indices,
        "test": plan.test_indices,
    }

    seen: dict[int, str] = {}
    for name, indices in parts.items():
        for idx in indices:
            if not 0 <= idx < n:
                issues.append(f"index {idx} in {name} is out of manifest bounds")
            elif idx in seen:
                issues.append(
                    f"index {idx} appears in both {seen[idx]} and {name}")
            else:
                seen[idx] = name
    missing = n - len(seen)
    if missing > 0:
        example = next(i for i in range(n) if i not in seen)
        issues.append(f"coverage: {missing} manifest indices unassigned "
                      f"(first missing: {example})")
    if len(plan.test_indices) != plan.spec.test_count:
        issues.append(f"test partition has {len(plan.test_indices)} indices, "
                      f"spec requires exactly {plan.spec.test_count}")
    if plan.manifest_sha256 and plan.manifest_sha256 != manifest.sha256():
        issues.append("manifest hash does not match the plan's recorded hash")

    labels = manifest.labels()
    counts = {}
    for name, indices in parts.items():
        valid = [i for i in indices if 0 <= i < n]
        counts[name] = np.bincount(labels[valid],
                                   minlength=manifest.num_classes).tolist()
        if indices:
            for c, cnt in enumerate(counts[name]):
                if cnt == 0:
                    warnings.append(
                        f"class {manifest.class_names[c]!r} absent from {name}")

    return SplitVerification(passed=not issues, issues=issues,
                             warnings=warnings, counts=counts)


# ---------------------------------------------------------------------------
# File I/O
# ---------------------------------------------------------------------------

def write_manifest_csv(manifest: DatasetManifest, path) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_bytes(manifest.to_csv_bytes())


def read_manifest_csv(path) -> DatasetManifest:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise DataError(f"cannot read manifest {path}: {exc}") from exc
    rows = list(csv.reader(io.StringIO(text)))
    if not rows or rows[0] != ["path", "label"]:
        raise DataError(f"manifest {path} missing 'path,label' header")
    body = [r for r in rows[1:] if r]
    if any(len(r) != 2 for r in body):
        raise DataError(f"manifest {path} has malformed rows")
    class_names = tuple(sorted({label for _, label in body}))
    index = {name: i for i, name in enumerate(class_names)}
    entries = tuple((path_, index[label]) for path_, label in body)
    return DatasetManifest(class_names, entries)


def write_split_plan(plan: SplitPlan, path) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_bytes(plan.to_json_bytes())


def read_split_plan(path) -> SplitPlan:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise DataError(f"cannot read split plan {path}: {exc}") from exc
    if doc.get("format") != "hemoclass-split-plan":
        raise DataError(f"{path} is not a split plan file")
    spec = SplitSpec(**doc["spec"])
    return SplitPlan(
        spec=spec,
        train_indices=tuple(doc["train_indices"]),
        val_indices=tuple(doc["val_indices"]),
        test_indices=tuple(doc["test_indices"]),
        per_class_train_counts=tuple(doc["per_class_train_counts"]),
        manifest_sha256=doc["manifest_sha256"],
        rng_algorithm=doc.get("rng_algorithm", RNG_ALGORITHM),
    )
