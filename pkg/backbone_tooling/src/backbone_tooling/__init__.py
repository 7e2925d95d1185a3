"""Backbone tooling: ONNX export, LR range test, and fine-tuning."""

from backbone_tooling.errors import (BackboneToolingError, ExportError,
                                     FinetuneError, LrFinderError)
from backbone_tooling.export import export_backbone, export_resnet
from backbone_tooling.finetune import (FinetuneConfig, FinetuneResult,
                                       finetune, resnet_param_groups)
from backbone_tooling.lr_finder import (LrSuggestion, find_learning_rate,
                                        torch_range_test)
from backbone_tooling.schedule import one_cycle_lrs

__version__ = "0.1.0"

__all__ = [
    "BackboneToolingError",
    "ExportError",
    "FinetuneError",
    "LrFinderError",
    "export_backbone",
    "export_resnet",
    "FinetuneConfig",
    "FinetuneResult",
    "finetune",
    "resnet_param_groups",
    "LrSuggestion",
    "find_learning_rate",
    "torch_range_test",
    "one_cycle_lrs",
    "__version__",
]
