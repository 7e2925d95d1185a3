"""Command-line surface: argument wiring and exit codes."""

import numpy as np
import pytest

torch = pytest.importorskip("torch")
from PIL import Image

from hemoclass.backbone import load_backbone
from hemoclass.data_model import (SplitSpec, ingest_directory, make_split,
                                  write_manifest_csv, write_split_plan)

from backbone_tooling.cli import build_parser, main


def test_finetune_flags_map_onto_config_fields():
    args = build_parser().parse_args([
        "finetune", "--manifest", "m.csv", "--plan", "p.json",
        "--out-dir", "out", "--epochs", "7", "--batch-size", "32",
        "--folds", "4", "--max-lr", "0.003", "--lr-decay", "3.0",
        "--seed", "9", "--device", "cpu"])
    assert args.epochs == 7
    assert args.batch_size == 32
    assert args.folds == 4
    assert args.max_lr == 0.003
    assert args.lr_decay == 3.0
    assert args.seed == 9


def test_export_unknown_variant_is_a_parser_error():
    with pytest.raises(SystemExit):
        build_parser().parse_args(["export", "--variant", "distilled",
                                   "--out", "x.onnx"])


def test_export_checkpoint_variant_needs_checkpoint(tmp_path):
    code = main(["export", "--variant", "checkpoint",
                 "--out", str(tmp_path / "x.onnx")])
    assert code == 2


def test_export_missing_checkpoint_file_is_io_error(tmp_path):
    code = main(["export", "--variant", "checkpoint",
                 "--checkpoint", str(tmp_path / "absent.pt"),
                 "--out", str(tmp_path / "x.onnx")])
    assert code == 3


def test_export_checkpoint_end_to_end(tmp_path, capsys):
    from torchvision.models import resnet50

    torch.manual_seed(4)
    model = resnet50(weights=None, num_classes=6)
    ckpt = tmp_path / "tuned.pt"
    torch.save({"state_dict": model.state_dict()}, ckpt)

    out = tmp_path / "tuned.onnx"
    code = main(["export", "--variant", "checkpoint", "--checkpoint",
                 str(ckpt), "--num-classes", "6", "--out", str(out)])
    assert code == 0
    assert str(out) in capsys.readouterr().out
    backbone = load_backbone(out)
    assert backbone.feature_dim == 2048
    assert backbone.num_classes == 6


def test_finetune_missing_manifest_is_io_error(tmp_path):
    code = main(["finetune", "--manifest", str(tmp_path / "absent.csv"),
                 "--plan", str(tmp_path / "absent.json"),
                 "--out-dir", str(tmp_path / "out")])
    assert code == 3


def test_finetune_infeasible_folds_is_config_error(tmp_path):
    rng = np.random.default_rng(0)
    for name in ("febrile", "quiescent"):
        d = tmp_path / "data" / name
        d.mkdir(parents=True)
        for i in range(6):
            pixels = rng.integers(0, 256, size=(16, 16, 3)).astype(np.uint8)
            Image.fromarray(pixels).save(d / f"{i}.png")
    manifest = ingest_directory(tmp_path / "data").manifest
    write_manifest_csv(manifest, tmp_path / "data" / "manifest.csv")
    plan = make_split(manifest, SplitSpec(train_fraction=0.5, test_count=2,
                                          seed=1))
    write_split_plan(plan, tmp_path / "data" / "plan.json")

    code = main(["finetune", "--manifest",
                 str(tmp_path / "data" / "manifest.csv"),
                 "--plan", str(tmp_path / "data" / "plan.json"),
                 "--out-dir", str(tmp_path / "out"), "--folds", "50"])
    assert code == 2
