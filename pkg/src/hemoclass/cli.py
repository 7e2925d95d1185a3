"""Command-line pipeline: ingest -> split -> extract -> train -> evaluate/curve.

Every artifact embeds the SHA-256 of its inputs, so a final report can be
traced back through model, features, split plan, and manifest. Exit codes:
2 bad configuration/usage, 3 IO or inference failure, 4 training failure,
5 feature/model dimension mismatch.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from hemoclass import data_model
from hemoclass.backbone import extract_features, load_backbone
from hemoclass.classifiers import predict_head, read_head, write_head
from hemoclass.errors import (
    ConfigError,
    DataError,
    DimensionMismatchError,
    HemoclassError,
    InferenceError,
    SchemaError,
    TrainingError,
)
from hemoclass.features import FeatureMatrix, file_sha256, read_featb, write_featb
from hemoclass.metrics import evaluate, render_csv, render_markdown
from hemoclass.model_selection import (
    DEFAULT_FOLDS,
    default_grid,
    grid_search,
    load_grid_file,
)
from hemoclass.preprocessing import PREPROCESSING_VERSION, prepare

log = logging.getLogger("hemoclass")

EXIT_CONFIG = 2
EXIT_IO = 3
EXIT_TRAINING = 4
EXIT_MISMATCH = 5

HEAD_CHOICES = ("knn", "svm", "forest", "gbt")
DEFAULT_HIGHLIGHT = "erythroblast"


def _write_text(path, text: str) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(text)


def _write_bytes(path, data: bytes) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_bytes(data)


# ---------------------------------------------------------------- ingest

def cmd_ingest(args) -> int:
    result = data_model.ingest_directory(args.directory)
    data_model.write_manifest_csv(result.manifest, args.out)
    log.info("manifest: %d images, %d classes, %d skipped -> %s",
             len(result.manifest.entries), len(result.manifest.class_names),
             len(result.skipped), args.out)
    print(f"wrote {args.out}: {len(result.manifest.entries)} images, "
          f"{len(result.manifest.class_names)} classes")
    return 0


# ---------------------------------------------------------------- split

def cmd_split(args) -> int:
    manifest = data_model.read_manifest_csv(args.manifest)
    spec = data_model.SplitSpec(train_fraction=args.train_frac,
                                test_count=args.test_count, seed=args.seed)
    plan = data_model.make_split(manifest, spec)
    check = data_model.verify_split(plan, manifest)
    if not check.passed:
        raise DataError("split verification failed: " + "; ".join(check.issues))
    for warning in check.warnings:
        log.warning("%s", warning)
    data_model.write_split_plan(plan, args.out)
    print(check.counts_table(manifest.class_names))
    print(f"wrote {args.out} (train={len(plan.train_indices)}, "
          f"val={len(plan.val_indices)}, test={len(plan.test_indices)})")
    return 0


# ---------------------------------------------------------------- extract

def _partition_indices(plan, partition: str):
    return {"train": plan.train_indices, "val": plan.val_indices,
            "test": plan.test_indices}[partition]


def _load_plan_for(manifest, path):
    plan = data_model.read_split_plan(path)
    if plan.manifest_sha256 != manifest.sha256():
        raise ConfigError(
            f"split plan {path} was built from a different manifest "
            f"({plan.manifest_sha256[:12]} != {manifest.sha256()[:12]})")
    return plan


def _extract_partition(backbone, manifest, plan, plan_sha, partition,
                       batch_size, root):
    indices = _partition_indices(plan, partition)
    root = Path(root)

    def tensors():
        for i in indices:
            path, _ = manifest.entries[i]
            yield prepare((root / path).read_bytes(), context=path)

    values = extract_features(backbone, tensors(), batch_size=batch_size)
    labels = np.array([manifest.entries[i][1] for i in indices],
                      dtype=np.int64)
    provenance = {
        "manifest_sha256": manifest.sha256(),
        "plan_sha256": plan_sha,
        "backbone_sha256": backbone.sha256,
        "partition": partition,
        "preprocessing": PREPROCESSING_VERSION,
        "class_names": list(manifest.class_names),
        "rows": [int(i) for i in indices],
    }
    return FeatureMatrix(values=values, labels=labels,
                         num_classes=len(manifest.class_names),
                         provenance=provenance)


def cmd_extract(args) -> int:
    manifest = data_model.read_manifest_csv(args.manifest)
    plan = _load_plan_for(manifest, args.plan)
    backbone = load_backbone(args.model)
    features = _extract_partition(
        backbone, manifest, plan, file_sha256(args.plan), args.partition,
        args.batch, args.image_root or Path(args.manifest).parent)
    write_featb(features, args.out)
    log.info("extracted %d x %d features -> %s", features.n_rows,
             features.dim, args.out)
    print(f"wrote {args.out}: {features.n_rows} rows, D={features.dim}")
    return 0


# ---------------------------------------------------------------- train

def _build_grid(args, feature_dim):
    if args.grid:
        return load_grid_file(args.grid, args.head, folds=args.folds,
                              seed=args.seed)
    return default_grid(args.head, feature_dim, folds=args.folds,
                        seed=args.seed)


def cmd_train(args) -> int:
    features = read_featb(args.features)
    grid = _build_grid(args, features.dim)
    try:
        result = grid_search(features.values, features.labels, grid,
                             num_classes=features.num_classes, jobs=args.jobs,
                             class_names=features.provenance.get("class_names"))
    except ConfigError as exc:
        # infeasible fold/class combinations surface as training failures
        raise TrainingError(str(exc)) from exc
    result.model.metadata["features_sha256"] = file_sha256(args.features)
    write_head(result.model, args.out)
    if args.cv_out:
        _write_bytes(args.cv_out, result.to_csv_bytes())
    log.info("chose %s (mean CV accuracy %.4f) -> %s",
             result.chosen, result.chosen_mean_accuracy, args.out)
    print(f"wrote {args.out}: {args.head} {result.chosen} "
          f"(CV accuracy {result.chosen_mean_accuracy:.4f})")
    return 0


# ---------------------------------------------------------------- evaluate

def _highlight_index(class_names, name):
    if name in class_names:
        return class_names.index(name)
    if name != DEFAULT_HIGHLIGHT:
        raise ConfigError(f"highlight class {name!r} not in {class_names}")
    return 0


def _evaluate_features(head, features, head_sha, features_sha, split_label,
                       classifier_label, highlight):
    if features.dim != head.dim:
        raise DimensionMismatchError(
            f"features have D={features.dim} but the model expects "
            f"D={head.dim}")
    class_names = tuple(features.provenance.get(
        "class_names", [str(i) for i in range(features.num_classes)]))
    predictions = predict_head(head, features.values)
    return evaluate(
        features.labels, predictions, class_names,
        split_label=split_label, classifier_label=classifier_label,
        highlight_class=_highlight_index(list(class_names), highlight),
        provenance={
            "model_sha256": head_sha,
            "features_sha256": features_sha,
            "feature_provenance": features.provenance,
        },
    ), predictions


def _provenance_section(report) -> str:
    chain = {k: v for k, v in report.provenance.items()
             if k != "feature_provenance"}
    feat = report.provenance.get("feature_provenance", {})
    for key in ("manifest_sha256", "plan_sha256", "backbone_sha256"):
        if key in feat:
            chain[key] = feat[key]
    lines = ["## Provenance", ""]
    lines += [f"- {key}: `{value}`" for key, value in sorted(chain.items())]
    return "\n".join(lines) + "\n"


def cmd_evaluate(args) -> int:
    head = read_head(args.model)
    features = read_featb(args.features)
    split_label = args.split_label or features.provenance.get(
        "partition", "test")
    classifier_label = args.label or head.kind
    report, predictions = _evaluate_features(
        head, features, file_sha256(args.model), file_sha256(args.features),
        split_label, classifier_label, args.highlight)
    if args.report:
        _write_text(args.report,
                    render_markdown([report]) + "\n" +
                    _provenance_section(report))
    if args.csv:
        _write_text(args.csv, render_csv([report]))
    if args.misclassified:
        rows = features.provenance.get("rows")
        if rows is None:
            raise ConfigError("feature file carries no manifest row indices; "
                              "re-extract before dumping misclassifications")
        manifest = data_model.read_manifest_csv(args.manifest) \
            if args.manifest else None
        wrong = np.flatnonzero(predictions != features.labels)
        lines = []
        for i in wrong:
            row = rows[int(i)]
            if manifest is not None:
                path, label = manifest.entries[row]
                lines.append(f"{path},{manifest.class_names[label]},"
                             f"{manifest.class_names[int(predictions[i])]}")
            else:
                lines.append(f"{row},{int(features.labels[i])},"
                             f"{int(predictions[i])}")
        _write_text(args.misclassified,
                    "\n".join(lines) + "\n" if lines else "")
    print(f"{classifier_label} @ {split_label}: "
          f"accuracy {100.0 * report.accuracy:.2f}%")
    return 0


# ---------------------------------------------------------------- curve

def _load_experiment(path):
    path = Path(path)
    text = path.read_text()
    if path.suffix.lower() == ".json":
        doc = json.loads(text)
    else:
        try:
            import tomllib
        except ModuleNotFoundError:
            import tomli as tomllib
        doc = tomllib.loads(text)
    required = {"manifest", "backbone", "train_fractions", "test_count",
                "seed", "heads", "out_dir"}
    missing = required - doc.keys()
    if missing:
        raise ConfigError(f"experiment config lacks keys: {sorted(missing)}")
    fractions = [float(f) for f in doc["train_fractions"]]
    if any(not 0.0 < f <= 1.0 for f in fractions):
        raise ConfigError("train_fractions must lie in (0, 1]")
    unknown = set(doc["heads"]) - set(HEAD_CHOICES)
    if unknown:
        raise ConfigError(f"unknown heads: {sorted(unknown)}")
    return doc, fractions


def _fraction_label(fraction: float) -> str:
    pct = 100.0 * fraction
    return f"{pct:g}%"


def cmd_curve(args) -> int:
    doc, fractions = _load_experiment(args.config)
    out_dir = Path(doc["out_dir"])
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest = data_model.read_manifest_csv(doc["manifest"])
    backbone = load_backbone(doc["backbone"])
    image_root = Path(doc.get("image_root", Path(doc["manifest"]).parent))
    seed = int(doc["seed"])
    folds = int(doc.get("folds", DEFAULT_FOLDS))
    test_features = None
    reports = []
    curve_rows = []
    for fraction in fractions:
        tag = f"frac{fraction:g}"
        spec = data_model.SplitSpec(train_fraction=fraction,
                                    test_count=int(doc["test_count"]),
                                    seed=seed)
        plan = data_model.make_split(manifest, spec)
        plan_path = out_dir / f"{tag}.plan.json"
        data_model.write_split_plan(plan, plan_path)
        plan_sha = file_sha256(plan_path)
        if test_features is None:
            test_features = _extract_partition(
                backbone, manifest, plan, plan_sha, "test",
                int(doc.get("batch", 64)), image_root)
            write_featb(test_features, out_dir / "test.featb")
        train_features = _extract_partition(
            backbone, manifest, plan, plan_sha, "train",
            int(doc.get("batch", 64)), image_root)
        train_path = out_dir / f"{tag}.train.featb"
        write_featb(train_features, train_path)
        for head_kind in doc["heads"]:
            if doc.get("grid"):
                grid = load_grid_file(doc["grid"], head_kind, folds=folds,
                                      seed=seed)
            else:
                grid = default_grid(head_kind, train_features.dim,
                                    folds=folds, seed=seed)
            result = grid_search(
                train_features.values, train_features.labels, grid,
                num_classes=train_features.num_classes, jobs=args.jobs,
                class_names=train_features.provenance.get("class_names"))
            result.model.metadata["features_sha256"] = file_sha256(train_path)
            model_path = out_dir / f"{tag}.{head_kind}.head"
            write_head(result.model, model_path)
            _write_bytes(out_dir / f"{tag}.{head_kind}.cv.csv",
                         result.to_csv_bytes())
            report, _ = _evaluate_features(
                result.model, test_features, file_sha256(model_path),
                file_sha256(out_dir / "test.featb"),
                _fraction_label(fraction), head_kind, args.highlight)
            reports.append(report)
            curve_rows.append((fraction, head_kind, report.accuracy))
            log.info("%s %s: test accuracy %.4f", tag, head_kind,
                     report.accuracy)
    lines = ["fraction,head,test_accuracy"]
    lines += [f"{frac:g},{head},{acc!r}" for frac, head, acc in curve_rows]
    _write_text(out_dir / "curve.csv", "\n".join(lines) + "\n")
    _write_text(out_dir / "report.md", render_markdown(reports))
    _write_text(out_dir / "report.csv", render_csv(reports))
    print(f"wrote {out_dir / 'curve.csv'} ({len(curve_rows)} rows)")
    return 0


# ---------------------------------------------------------------- wiring

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="hemoclass",
        description="Blood-cell classification pipeline: frozen CNN features "
                    "feeding classical classifier heads.")
    parser.add_argument("-v", "--verbose", action="store_true",
                        help="enable debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="scan a class-per-directory image tree "
                                      "into a manifest CSV")
    p.add_argument("directory")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("split", help="draw a stratified train/val/test plan")
    p.add_argument("manifest")
    p.add_argument("--train-frac", type=float, required=True,
                   help="per-class training fraction in (0, 1]")
    p.add_argument("--test-count", type=int, required=True,
                   help="total test-set size drawn before training rows")
    p.add_argument("--seed", type=int, default=42)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_split)

    p = sub.add_parser("extract", help="run images through the backbone and "
                                       "store feature vectors")
    p.add_argument("--model", required=True, help="ONNX backbone path")
    p.add_argument("--manifest", required=True)
    p.add_argument("--plan", required=True)
    p.add_argument("--partition", choices=("train", "val", "test"),
                   required=True)
    p.add_argument("--batch", type=int, default=64)
    p.add_argument("--image-root", default=None,
                   help="base directory for manifest paths "
                        "(default: the manifest's directory)")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("train", help="grid-search a classifier head with "
                                     "stratified k-fold CV and refit the best")
    p.add_argument("--features", required=True)
    p.add_argument("--head", choices=HEAD_CHOICES, required=True)
    p.add_argument("--grid", default=None,
                   help="TOML/JSON grid file (default: built-in grid)")
    p.add_argument("--folds", type=int, default=DEFAULT_FOLDS)
    p.add_argument("--seed", type=int, default=42)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--cv-out", default=None, help="CV table CSV path")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="score a trained head on a feature "
                                        "file and render reports")
    p.add_argument("--model", required=True)
    p.add_argument("--features", required=True)
    p.add_argument("--report", default=None, help="markdown output path")
    p.add_argument("--csv", default=None, help="CSV output path")
    p.add_argument("--split-label", default=None)
    p.add_argument("--label", default=None, help="classifier column label")
    p.add_argument("--highlight", default=DEFAULT_HIGHLIGHT,
                   help="class whose P/R/F1 triple heads the table")
    p.add_argument("--misclassified", default=None,
                   help="write misclassified sample paths to this file")
    p.add_argument("--manifest", default=None,
                   help="manifest for resolving misclassified paths")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("curve", help="sweep training fractions and emit "
                                     "accuracy-vs-size curve data")
    p.add_argument("--config", required=True,
                   help="experiment TOML/JSON config")
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--highlight", default=DEFAULT_HIGHLIGHT)
    p.set_defaults(func=cmd_curve)
    return parser


_EXIT_CODES = (
    (ConfigError, EXIT_CONFIG),
    (DimensionMismatchError, EXIT_MISMATCH),
    (TrainingError, EXIT_TRAINING),
    ((DataError, SchemaError, InferenceError, OSError), EXIT_IO),
)


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except Exception as exc:  # noqa: BLE001 - mapped to exit codes below
        for types, code in _EXIT_CODES:
            if isinstance(exc, types):
                log.error("%s", exc)
                return code
        if isinstance(exc, HemoclassError):
            log.error("%s", exc)
            return EXIT_IO
        raise


if __name__ == "__main__":
    sys.exit(main())
