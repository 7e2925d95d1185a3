"""Exception hierarchy shared across the pipeline.

The CLI maps these onto its exit-code taxonomy, so raising the right
class matters more than the message text.
"""


class HemoclassError(Exception):
    """Base class for all errors raised by this package."""


class ConfigError(HemoclassError):
    """Invalid configuration, parameters, or an infeasible split spec."""


class DataError(HemoclassError):
    """Dataset ingestion, image decoding, or file I/O failure."""


class SchemaError(HemoclassError):
    """A model or container file does not match its declared format."""


class InferenceError(HemoclassError):
    """Backbone graph execution failed."""


class TrainingError(HemoclassError):
    """A classifier head could not be trained on the given data."""


class DimensionMismatchError(HemoclassError):
    """Feature dimensionality disagrees between artifacts."""
