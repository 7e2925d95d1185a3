"""Errors raised by the backbone export and fine-tuning tools."""


class BackboneToolingError(Exception):
    """Base class for all errors raised by this package."""


class ExportError(BackboneToolingError):
    """The model cannot be exported to the ONNX contract."""


class LrFinderError(BackboneToolingError):
    """The learning-rate range test produced no usable suggestion."""


class FinetuneError(BackboneToolingError):
    """Fine-tuning failed."""
