"""Cross-validated fine-tuning on a small synthetic dataset.

A tiny injected CNN stands in for the real backbone so the full driver
(fold rotation, one-cycle stepping, checkpointing, metrics) runs in seconds.
"""

import json

import numpy as np
import pytest

torch = pytest.importorskip("torch")
from PIL import Image

from hemoclass.data_model import (SplitSpec, ingest_directory, make_split,
                                  write_manifest_csv, write_split_plan)

from backbone_tooling.errors import FinetuneError
from backbone_tooling.finetune import (FinetuneConfig, finetune,
                                       resnet_param_groups)

CLASS_COLORS = {
    "azure": (80, 140, 220),
    "coral": (230, 110, 90),
    "mint": (90, 210, 140),
}


class TinyNet(torch.nn.Module):
    def __init__(self, num_classes):
        super().__init__()
        self.conv = torch.nn.Conv2d(3, 4, kernel_size=7, stride=8)
        self.pool = torch.nn.AdaptiveAvgPool2d(1)
        self.fc = torch.nn.Linear(4, num_classes)

    def forward(self, x):
        x = torch.relu(self.conv(x))
        x = torch.flatten(self.pool(x), 1)
        return self.fc(x)


def tiny_factory(num_classes):
    return TinyNet(num_classes)


def tiny_groups(model):
    return [list(model.conv.parameters()), list(model.fc.parameters())]


def build_dataset(root, per_class=14, side=32, seed=5):
    rng = np.random.default_rng(seed)
    for name, color in CLASS_COLORS.items():
        class_dir = root / name
        class_dir.mkdir(parents=True)
        for i in range(per_class):
            pixels = np.clip(
                np.array(color, dtype=np.float64)
                + rng.normal(0.0, 25.0, size=(side, side, 3)),
                0, 255).astype(np.uint8)
            Image.fromarray(pixels).save(class_dir / f"img_{i:03d}.png")


@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    root = tmp_path_factory.mktemp("tinyset")
    build_dataset(root)
    manifest = ingest_directory(root).manifest
    write_manifest_csv(manifest, root / "manifest.csv")
    plan = make_split(manifest, SplitSpec(train_fraction=0.8, test_count=6,
                                          seed=11))
    write_split_plan(plan, root / "plan.json")
    return root


def base_config(dataset, out_dir, **overrides):
    settings = dict(manifest_path=dataset / "manifest.csv",
                    plan_path=dataset / "plan.json", out_dir=out_dir,
                    epochs=2, batch_size=16, folds=3, max_lr=0.01, seed=3)
    settings.update(overrides)
    return FinetuneConfig(**settings)


@pytest.fixture(scope="module")
def run(dataset, tmp_path_factory):
    out_dir = tmp_path_factory.mktemp("run")
    result = finetune(base_config(dataset, out_dir),
                      model_factory=tiny_factory, groups_fn=tiny_groups)
    metrics = json.loads(result.metrics_path.read_text())
    return result, metrics


def test_artifacts_written(run):
    result, metrics = run
    assert result.checkpoint_path.exists()
    assert not result.checkpoint_path.with_suffix(".tmp").exists()
    assert len(metrics["fold_reports"]) == 3
    assert all(len(r["epochs"]) == 2 for r in metrics["fold_reports"])
    assert metrics["max_lr"] == result.max_lr == 0.01


def test_topk_never_below_top1(run):
    _, metrics = run
    for report in metrics["fold_reports"]:
        for row in report["epochs"]:
            assert row["topk"] >= row["top1"]
            assert 0.0 <= row["top1"] <= 1.0


def test_best_checkpoint_is_global_minimum(run):
    result, metrics = run
    rows = [(row["val_loss"], r["fold"], row["epoch"])
            for r in metrics["fold_reports"] for row in r["epochs"]]
    best_loss, best_fold, best_epoch = min(rows)
    payload = torch.load(result.checkpoint_path, map_location="cpu",
                         weights_only=True)
    assert payload["val_loss"] == best_loss == result.best_val_loss
    assert payload["fold"] == best_fold == result.best_fold
    assert payload["epoch"] == best_epoch
    assert metrics["best"] == {"fold": best_fold, "val_loss": best_loss}


def test_checkpoint_restores_into_fresh_model(run):
    result, metrics = run
    payload = torch.load(result.checkpoint_path, map_location="cpu",
                         weights_only=True)
    model = tiny_factory(payload["num_classes"])
    model.load_state_dict(payload["state_dict"])
    assert payload["num_classes"] == 3


def test_summary_statistics_match_fold_finals(run):
    result, metrics = run
    finals = [r["final"]["top1"] for r in metrics["fold_reports"]]
    assert metrics["mean_top1"] == pytest.approx(np.mean(finals), abs=1e-12)
    assert metrics["std_top1"] == pytest.approx(np.std(finals), abs=1e-12)
    assert result.fold_top1 == tuple(finals)


def test_rerun_reproduces_metrics(dataset, run, tmp_path):
    _, metrics = run
    again = finetune(base_config(dataset, tmp_path / "again"),
                     model_factory=tiny_factory, groups_fn=tiny_groups)
    again_metrics = json.loads(again.metrics_path.read_text())
    assert again_metrics["fold_reports"] == metrics["fold_reports"]


def test_range_test_fills_in_missing_peak(dataset, tmp_path):
    # batch 4 keeps each fold above the schedule's 3-step minimum
    config = base_config(dataset, tmp_path / "auto", max_lr=None, epochs=1,
                         folds=2, batch_size=4)
    result = finetune(config, model_factory=tiny_factory,
                      groups_fn=tiny_groups)
    assert result.max_lr > 0
    metrics = json.loads(result.metrics_path.read_text())
    assert metrics["max_lr"] == result.max_lr


def test_groups_must_cover_all_parameters(dataset, tmp_path):
    with pytest.raises(FinetuneError, match="cover"):
        finetune(base_config(dataset, tmp_path / "bad"),
                 model_factory=tiny_factory,
                 groups_fn=lambda m: [list(m.fc.parameters())])


def test_foreign_plan_rejected(dataset, tmp_path):
    build_dataset(tmp_path / "other", per_class=4)
    other = ingest_directory(tmp_path / "other").manifest
    write_manifest_csv(other, tmp_path / "other_manifest.csv")
    config = base_config(dataset, tmp_path / "x",
                         manifest_path=tmp_path / "other_manifest.csv",
                         image_root=tmp_path / "other")
    with pytest.raises(FinetuneError, match="different manifest"):
        finetune(config, model_factory=tiny_factory, groups_fn=tiny_groups)


def test_more_folds_than_smallest_class_names_it(dataset, tmp_path):
    config = base_config(dataset, tmp_path / "x", folds=20)
    with pytest.raises(FinetuneError, match="azure"):
        finetune(config, model_factory=tiny_factory, groups_fn=tiny_groups)


@pytest.mark.parametrize("overrides,fragment", [
    ({"epochs": 0}, "epochs"),
    ({"batch_size": 0}, "batch_size"),
    ({"lr_decay": 0.9}, "lr_decay"),
    ({"max_lr": -0.5}, "max_lr"),
])
def test_invalid_settings_rejected(dataset, tmp_path, overrides, fragment):
    with pytest.raises(FinetuneError, match=fragment):
        finetune(base_config(dataset, tmp_path / "x", **overrides),
                 model_factory=tiny_factory, groups_fn=tiny_groups)


def test_resnet_groups_cover_resnet():
    from torchvision.models import resnet18

    model = resnet18(weights=None, num_classes=4)
    groups = resnet_param_groups(model)
    assert len(groups) == 5
    grouped = {id(p) for g in groups for p in g}
    trainable = {id(p) for p in model.parameters() if p.requires_grad}
    assert grouped == trainable
