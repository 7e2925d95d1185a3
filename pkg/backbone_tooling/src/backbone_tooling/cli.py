"""Command-line interface: backbone export, LR range test, fine-tuning."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from hemoclass.errors import HemoclassError

from backbone_tooling.errors import BackboneToolingError
from backbone_tooling.export import DEFAULT_NUM_CLASSES, export_backbone
from backbone_tooling.finetune import FinetuneConfig, finetune
from backbone_tooling.lr_finder import (DEFAULT_MAX_LR, DEFAULT_MIN_LR,
                                        torch_range_test)

log = logging.getLogger("backbone_tooling")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="backbone-tooling",
        description="Export and fine-tune the convolutional backbone.")
    parser.add_argument("-v", "--verbose", action="store_true",
                        help="enable debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    p_export = sub.add_parser(
        "export", help="write the backbone as an ONNX graph")
    p_export.add_argument("--variant", choices=("pretrained", "checkpoint"),
                          default="pretrained")
    p_export.add_argument("--checkpoint", type=Path,
                          help="fine-tuned weights (required for "
                               "--variant checkpoint)")
    p_export.add_argument("--num-classes", type=int,
                          default=DEFAULT_NUM_CLASSES)
    p_export.add_argument("--out", type=Path, required=True)

    p_lr = sub.add_parser(
        "find-lr", help="run the learning-rate range test")
    _add_data_args(p_lr)
    p_lr.add_argument("--batch-size", type=int, default=64)
    p_lr.add_argument("--steps", type=int, default=100)
    p_lr.add_argument("--min-lr", type=float, default=DEFAULT_MIN_LR)
    p_lr.add_argument("--max-lr", type=float, default=DEFAULT_MAX_LR)
    p_lr.add_argument("--seed", type=int, default=0)
    p_lr.add_argument("--num-classes", type=int,
                      default=DEFAULT_NUM_CLASSES)

    p_ft = sub.add_parser(
        "finetune", help="cross-validated fine-tuning run")
    _add_data_args(p_ft)
    p_ft.add_argument("--out-dir", type=Path, required=True)
    p_ft.add_argument("--epochs", type=int, default=15)
    p_ft.add_argument("--batch-size", type=int, default=64)
    p_ft.add_argument("--folds", type=int, default=5)
    p_ft.add_argument("--max-lr", type=float, default=None,
                      help="one-cycle peak; omit to run the range test first")
    p_ft.add_argument("--lr-decay", type=float, default=2.6,
                      help="learning-rate ratio between adjacent depth groups")
    p_ft.add_argument("--seed", type=int, default=0)
    p_ft.add_argument("--device", default="cpu")
    return parser


def _add_data_args(parser) -> None:
    parser.add_argument("--manifest", type=Path, required=True)
    parser.add_argument("--plan", type=Path, required=True)
    parser.add_argument("--image-root", type=Path, default=None,
                        help="directory the manifest paths are relative to "
                             "(default: the manifest's directory)")


def cmd_export(args) -> int:
    path = export_backbone(args.variant, args.out,
                           checkpoint=args.checkpoint,
                           num_classes=args.num_classes)
    print(path)
    return 0


def cmd_find_lr(args) -> int:
    from backbone_tooling.finetune import (_default_model_factory,
                                           _load_batch)
    from hemoclass.data_model import read_manifest_csv, read_split_plan

    manifest = read_manifest_csv(args.manifest)
    plan = read_split_plan(args.plan)
    image_root = (args.image_root if args.image_root is not None
                  else Path(args.manifest).parent)
    model = _default_model_factory(args.num_classes)
    rng = np.random.default_rng(args.seed)
    order = rng.permutation(np.array(plan.train_indices, dtype=np.int64))
    labels = manifest.labels()
    batches = [
        _load_batch(image_root, manifest.entries, labels,
                    order[start : start + args.batch_size])
        for start in range(0, min(len(order), 8 * args.batch_size),
                           args.batch_size)
    ]
    suggestion = torch_range_test(model, batches, min_lr=args.min_lr,
                                  max_lr=args.max_lr, steps=args.steps,
                                  seed=args.seed)
    print(f"suggested max_lr: {suggestion.max_lr:.6g}")
    return 0


def cmd_finetune(args) -> int:
    config = FinetuneConfig(
        manifest_path=args.manifest, plan_path=args.plan,
        out_dir=args.out_dir, image_root=args.image_root,
        epochs=args.epochs, batch_size=args.batch_size, folds=args.folds,
        max_lr=args.max_lr, lr_decay=args.lr_decay, seed=args.seed,
        device=args.device)
    result = finetune(config)
    print(f"best checkpoint: {result.checkpoint_path} "
          f"(fold {result.best_fold}, val loss {result.best_val_loss:.4f})")
    print(f"metrics: {result.metrics_path}")
    return 0


_COMMANDS = {
    "export": cmd_export,
    "find-lr": cmd_find_lr,
    "finetune": cmd_finetune,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s")
    try:
        return _COMMANDS[args.command](args)
    except BackboneToolingError as exc:
        log.error("%s", exc)
        return 2
    except (OSError, HemoclassError) as exc:
        log.error("%s", exc)
        return 3


if __name__ == "__main__":
    sys.exit(main())
