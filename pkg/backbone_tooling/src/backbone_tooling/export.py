"""Export a ResNet-50 classifier into the pipeline's ONNX contract.

The exported graph exposes two outputs: `features` (the post-pool
2048-dimensional vector the classifier heads consume) and `logits` (the
fully connected head). The graph is emitted node by node from the module
tree, so the file contains exactly the op vocabulary the feature-extraction
runtime supports.
"""

from __future__ import annotations

import logging
from pathlib import Path

import numpy as np
import torch
from torchvision.models import resnet50
from torchvision.models.resnet import Bottleneck

from hemoclass.onnx.builder import GraphBuilder
from hemoclass.onnx.proto import save_model

from backbone_tooling.errors import ExportError

log = logging.getLogger("backbone_tooling")

FEATURE_OUTPUT = "features"
LOGITS_OUTPUT = "logits"
DEFAULT_NUM_CLASSES = 8


def _tensor(t: torch.Tensor) -> np.ndarray:
    return t.detach().cpu().numpy().astype(np.float32)


def _emit_conv(g: GraphBuilder, module: torch.nn.Conv2d, x: str) -> str:
    if module.groups != 1:
        raise ExportError("grouped convolutions are outside the contract")
    pads = (module.padding[0], module.padding[1],
            module.padding[0], module.padding[1])
    bias = _tensor(module.bias) if module.bias is not None else None
    return g.conv(x, _tensor(module.weight), bias,
                  strides=tuple(module.stride), pads=pads)


def _emit_bn(g: GraphBuilder, module: torch.nn.BatchNorm2d, x: str) -> str:
    return g.batch_norm(x, _tensor(module.weight), _tensor(module.bias),
                        _tensor(module.running_mean),
                        _tensor(module.running_var), epsilon=module.eps)


def _emit_bottleneck(g: GraphBuilder, block: Bottleneck, x: str) -> str:
    if not isinstance(block, Bottleneck):
        raise ExportError(
            f"only bottleneck residual blocks are supported, got "
            f"{type(block).__name__}")
    out = g.relu(_emit_bn(g, block.bn1, _emit_conv(g, block.conv1, x)))
    out = g.relu(_emit_bn(g, block.bn2, _emit_conv(g, block.conv2, out)))
    out = _emit_bn(g, block.bn3, _emit_conv(g, block.conv3, out))
    identity = x
    if block.downsample is not None:
        identity = _emit_bn(g, block.downsample[1],
                            _emit_conv(g, block.downsample[0], x))
    return g.relu(g.add(out, identity))


def export_resnet(model: torch.nn.Module, out_path) -> Path:
    """Write a torchvision ResNet as an ONNX file with the two contract
    outputs; returns the output path."""
    model = model.eval()
    feature_dim = model.fc.in_features
    num_classes = model.fc.out_features

    g = GraphBuilder("resnet50", input_shape=("batch", 3, 224, 224))
    x = g.relu(_emit_bn(g, model.bn1, _emit_conv(g, model.conv1, "input")))
    x = g.max_pool(x, kernel=(3, 3), strides=(2, 2), pads=(1, 1, 1, 1))
    for stage in (model.layer1, model.layer2, model.layer3, model.layer4):
        for block in stage:
            x = _emit_bottleneck(g, block, x)
    pooled = g.global_average_pool(x)
    g.flatten(pooled, output=FEATURE_OUTPUT)
    g.gemm(FEATURE_OUTPUT, _tensor(model.fc.weight), _tensor(model.fc.bias),
           output=LOGITS_OUTPUT)
    g.mark_output(FEATURE_OUTPUT, ("batch", feature_dim))
    g.mark_output(LOGITS_OUTPUT, ("batch", num_classes))

    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    save_model(g.model(opset_version=13), out_path)
    log.info("exported %s: features dim %d, %d-way logits",
             out_path, feature_dim, num_classes)
    return out_path


def load_checkpoint_model(checkpoint_path,
                          num_classes: int = DEFAULT_NUM_CLASSES):
    """Rebuild a ResNet-50 from a fine-tuning checkpoint."""
    payload = torch.load(checkpoint_path, map_location="cpu",
                         weights_only=True)
    state = payload.get("state_dict", payload)
    head_shape = state.get("fc.weight")
    if head_shape is None:
        raise ExportError(f"{checkpoint_path}: no fc.weight in checkpoint")
    if head_shape.shape[0] != num_classes:
        raise ExportError(
            f"checkpoint head is {head_shape.shape[0]}-way, expected "
            f"{num_classes} classes")
    model = resnet50(weights=None, num_classes=num_classes)
    model.load_state_dict(state)
    return model


def export_backbone(variant: str, out_path, checkpoint=None,
                    num_classes: int = DEFAULT_NUM_CLASSES) -> Path:
    """Export either the ImageNet-pretrained ResNet-50 or a fine-tuned
    checkpoint."""
    if variant == "pretrained":
        try:
            from torchvision.models import ResNet50_Weights
            model = resnet50(weights=ResNet50_Weights.IMAGENET1K_V2)
        except Exception as exc:
            raise ExportError(
                f"pretrained weights unavailable ({exc}); download them or "
                f"export from a checkpoint") from exc
    elif variant == "checkpoint":
        if checkpoint is None:
            raise ExportError("checkpoint variant requires a checkpoint path")
        model = load_checkpoint_model(checkpoint, num_classes=num_classes)
    else:
        raise ExportError(f"unknown export variant {variant!r}")
    return export_resnet(model, out_path)
