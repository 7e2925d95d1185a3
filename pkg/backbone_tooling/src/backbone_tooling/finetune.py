"""Fine-tuning driver for the classification backbone.

Trains a torch model on the training partition of a split plan under
stratified k-fold cross-validation, with discriminative learning rates
across depth groups and a one-cycle schedule per fold. The single best
checkpoint (lowest validation loss across all folds and epochs) is kept.
"""

from __future__ import annotations

import json
import logging
import math
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from hemoclass.data_model import read_manifest_csv, read_split_plan
from hemoclass.errors import ConfigError
from hemoclass.model_selection import kfold_indices
from hemoclass.preprocessing import prepare

from backbone_tooling.errors import FinetuneError
from backbone_tooling.lr_finder import torch_range_test
from backbone_tooling.schedule import one_cycle_lrs

log = logging.getLogger("backbone_tooling")

CHECKPOINT_NAME = "best.pt"
METRICS_NAME = "metrics.json"


@dataclass(frozen=True)
class FinetuneConfig:
    manifest_path: Path
    plan_path: Path
    out_dir: Path
    image_root: Path | None = None   # defaults to the manifest's directory
    epochs: int = 15
    batch_size: int = 64
    folds: int = 5
    max_lr: float | None = None      # None -> run the range test first
    lr_decay: float = 2.6            # rate ratio between adjacent depth groups
    seed: int = 0
    device: str = "cpu"


@dataclass
class FinetuneResult:
    checkpoint_path: Path
    metrics_path: Path
    max_lr: float
    best_fold: int
    best_val_loss: float
    fold_top1: tuple[float, ...]


def resnet_param_groups(model) -> list[list]:
    """Depth groups for torchvision ResNets, earliest to latest.

    The stem shares a group with the first stage; the classifier head is
    its own group and receives the full learning rate.
    """
    return [
        list(model.conv1.parameters()) + list(model.bn1.parameters())
        + list(model.layer1.parameters()),
        list(model.layer2.parameters()),
        list(model.layer3.parameters()),
        list(model.layer4.parameters()),
        list(model.fc.parameters()),
    ]


def _group_scales(num_groups: int, decay: float) -> np.ndarray:
    """Multipliers so the last group trains at 1.0 and each earlier group
    at 1/decay of its successor."""
    exponents = np.arange(num_groups, dtype=np.float64) - (num_groups - 1)
    return decay ** exponents


def _check_groups_cover(model, groups) -> None:
    grouped = {id(p) for group in groups for p in group}
    trainable = {id(p) for p in model.parameters() if p.requires_grad}
    if grouped != trainable:
        raise FinetuneError(
            "parameter groups must cover every trainable parameter exactly; "
            f"grouped {len(grouped)}, model has {len(trainable)}")


def _load_batch(image_root: Path, entries, labels, idxs):
    import torch

    tensors = [prepare((image_root / entries[i][0]).read_bytes(),
                       context=entries[i][0]) for i in idxs]
    x = torch.from_numpy(np.stack(tensors))
    y = torch.from_numpy(labels[idxs])
    return x, y


def _evaluate(model, image_root, entries, labels, idxs, batch_size, device):
    """Average cross-entropy, top-1 and top-k accuracy on one index set."""
    import torch
    import torch.nn.functional as F

    k = min(5, int(labels.max()) + 1)
    total_loss = 0.0
    top1 = 0
    topk = 0
    model.eval()
    with torch.no_grad():
        for start in range(0, len(idxs), batch_size):
            chunk = idxs[start : start + batch_size]
            x, y = _load_batch(image_root, entries, labels, chunk)
            logits = model(x.to(device))
            y = y.to(device)
            total_loss += F.cross_entropy(
                logits, y, reduction="sum").item()
            ranked = logits.topk(k, dim=1).indices
            top1 += int((ranked[:, 0] == y).sum().item())
            topk += int((ranked == y.unsqueeze(1)).any(dim=1).sum().item())
    n = len(idxs)
    return total_loss / n, top1 / n, topk / n


def _resolve_max_lr(config: FinetuneConfig, model_factory, num_classes,
                    image_root, entries, labels, train_idx) -> float:
    """Run the range test on a throwaway model over the first few batches."""
    if config.max_lr is not None:
        if config.max_lr <= 0:
            raise FinetuneError(f"max_lr must be positive, got {config.max_lr}")
        return float(config.max_lr)
    probe = model_factory(num_classes)
    rng = np.random.default_rng(config.seed)
    order = rng.permutation(train_idx)
    batches = []
    for start in range(0, min(len(order), 8 * config.batch_size),
                       config.batch_size):
        batches.append(_load_batch(image_root, entries, labels,
                                   order[start : start + config.batch_size]))
    suggestion = torch_range_test(probe, batches, steps=60, seed=config.seed)
    log.info("range test suggests max_lr=%.3g", suggestion.max_lr)
    return suggestion.max_lr


def _default_model_factory(num_classes: int):
    import torch.nn as nn
    from torchvision.models import resnet50

    try:
        from torchvision.models import ResNet50_Weights
        model = resnet50(weights=ResNet50_Weights.IMAGENET1K_V2)
    except Exception as exc:
        raise FinetuneError(
            f"could not build a pretrained backbone ({exc}); pass an explicit "
            "model factory or run with downloaded weights available") from exc
    model.fc = nn.Linear(model.fc.in_features, num_classes)
    return model


def finetune(config: FinetuneConfig, model_factory=None,
             groups_fn=None) -> FinetuneResult:
    """Cross-validated fine-tuning; returns paths to the best checkpoint
    and the metrics report.

    `model_factory(num_classes)` builds a fresh model per fold (defaults to
    a pretrained ResNet-50 with a replaced head). `groups_fn(model)` returns
    depth-ordered parameter groups (defaults to the ResNet grouping).
    """
    import torch
    import torch.nn.functional as F

    if config.epochs < 1:
        raise FinetuneError(f"epochs must be >= 1, got {config.epochs}")
    if config.batch_size < 1:
        raise FinetuneError(
            f"batch_size must be >= 1, got {config.batch_size}")
    if config.lr_decay < 1.0:
        raise FinetuneError(
            f"lr_decay must be >= 1.0, got {config.lr_decay}")

    manifest = read_manifest_csv(config.manifest_path)
    plan = read_split_plan(config.plan_path)
    if plan.manifest_sha256 != manifest.sha256():
        raise FinetuneError(
            "split plan was computed for a different manifest "
            f"({plan.manifest_sha256[:12]} vs {manifest.sha256()[:12]})")
    image_root = (Path(config.image_root) if config.image_root is not None
                  else Path(config.manifest_path).parent)

    entries = manifest.entries
    all_labels = manifest.labels()
    train_pool = np.array(plan.train_indices, dtype=np.int64)
    pool_labels = all_labels[train_pool]
    num_classes = manifest.num_classes
    try:
        folds = kfold_indices(pool_labels, config.folds, config.seed,
                              class_names=manifest.class_names)
    except ConfigError as exc:
        raise FinetuneError(str(exc)) from exc

    if model_factory is None:
        model_factory = _default_model_factory
    if groups_fn is None:
        groups_fn = resnet_param_groups

    torch.manual_seed(config.seed)
    max_lr = _resolve_max_lr(config, model_factory, num_classes, image_root,
                             entries, all_labels, train_pool)

    out_dir = Path(config.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    checkpoint_path = out_dir / CHECKPOINT_NAME
    best_val_loss = math.inf
    best_fold = -1
    fold_reports = []

    try:
        for fold_id, val_positions in enumerate(folds):
            val_mask = np.zeros(len(train_pool), dtype=bool)
            val_mask[np.asarray(val_positions, dtype=np.int64)] = True
            fold_train = train_pool[~val_mask]
            fold_val = train_pool[val_mask]

            torch.manual_seed(config.seed + fold_id)
            model = model_factory(num_classes).to(config.device)
            groups = groups_fn(model)
            _check_groups_cover(model, groups)
            scales = _group_scales(len(groups), config.lr_decay)

            steps_per_epoch = math.ceil(len(fold_train) / config.batch_size)
            trace = one_cycle_lrs(max_lr, config.epochs * steps_per_epoch)
            optimizer = torch.optim.Adam(
                [{"params": group, "lr": trace[0] * scale}
                 for group, scale in zip(groups, scales)])

            step = 0
            epoch_rows = []
            for epoch in range(config.epochs):
                rng = np.random.default_rng(
                    [config.seed, fold_id, epoch])
                order = rng.permutation(fold_train)
                model.train()
                running = 0.0
                for start in range(0, len(order), config.batch_size):
                    chunk = order[start : start + config.batch_size]
                    for pg, scale in zip(optimizer.param_groups, scales):
                        pg["lr"] = trace[step] * scale
                    x, y = _load_batch(image_root, entries, all_labels, chunk)
                    optimizer.zero_grad()
                    loss = F.cross_entropy(model(x.to(config.device)),
                                           y.to(config.device))
                    loss.backward()
                    optimizer.step()
                    running += loss.item() * len(chunk)
                    step += 1

                val_loss, top1, topk = _evaluate(
                    model, image_root, entries, all_labels, fold_val,
                    config.batch_size, config.device)
                epoch_rows.append({
                    "epoch": epoch,
                    "train_loss": running / len(fold_train),
                    "val_loss": val_loss,
                    "top1": top1,
                    "topk": topk,
                })
                log.info("fold %d epoch %d: train %.4f val %.4f top1 %.4f",
                         fold_id, epoch, epoch_rows[-1]["train_loss"],
                         val_loss, top1)
                if val_loss < best_val_loss:
                    best_val_loss = val_loss
                    best_fold = fold_id
                    _save_checkpoint(checkpoint_path, model, fold_id, epoch,
                                     val_loss, num_classes)

            fold_reports.append({"fold": fold_id, "epochs": epoch_rows,
                                 "final": epoch_rows[-1]})
    except torch.cuda.OutOfMemoryError as exc:
        raise FinetuneError(
            f"ran out of device memory ({exc}); reduce --batch-size") from exc
    except RuntimeError as exc:
        if "out of memory" in str(exc).lower():
            raise FinetuneError(
                f"ran out of device memory ({exc}); reduce --batch-size"
            ) from exc
        raise

    fold_top1 = tuple(r["final"]["top1"] for r in fold_reports)
    metrics = {
        "max_lr": max_lr,
        "lr_decay": config.lr_decay,
        "epochs": config.epochs,
        "batch_size": config.batch_size,
        "folds": config.folds,
        "seed": config.seed,
        "plan_sha256": plan.sha256(),
        "best": {"fold": best_fold, "val_loss": best_val_loss},
        "fold_reports": fold_reports,
        "mean_top1": float(np.mean(fold_top1)),
        "std_top1": float(np.std(fold_top1)),
    }
    metrics_path = out_dir / METRICS_NAME
    metrics_path.write_text(json.dumps(metrics, indent=2) + "\n")
    log.info("mean top-1 %.4f (+/- %.4f); best checkpoint from fold %d",
             metrics["mean_top1"], metrics["std_top1"], best_fold)
    return FinetuneResult(checkpoint_path=checkpoint_path,
                          metrics_path=metrics_path, max_lr=max_lr,
                          best_fold=best_fold, best_val_loss=best_val_loss,
                          fold_top1=fold_top1)


def _save_checkpoint(path: Path, model, fold: int, epoch: int,
                     val_loss: float, num_classes: int) -> None:
    """Write atomically so an interrupted save never corrupts the best file."""
    import torch

    tmp = path.with_suffix(".tmp")
    torch.save({
        "state_dict": model.state_dict(),
        "fold": fold,
        "epoch": epoch,
        "val_loss": val_loss,
        "num_classes": num_classes,
    }, tmp)
    os.replace(tmp, path)
