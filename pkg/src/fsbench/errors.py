"""Exception types shared across the package.

Each class carries the process exit code the CLI maps it to:
2 configuration, 3 method/protocol applicability, 4 missing inputs,
5 numeric failure.
"""


class FsbenchError(Exception):
    exit_code = 1


class ConfigError(FsbenchError):
    exit_code = 2


class SchemaError(ConfigError):
    """A required column or field is absent or malformed."""


class LabelError(ConfigError):
    """A label value is not binary after the configured label rule."""


class DimensionError(ConfigError):
    """Tensor shapes are incompatible for the requested operation."""


class ApplicabilityError(FsbenchError):
    """Selector asked to run in a stage or selection mode it does not support."""

    exit_code = 3


class MissingInputError(FsbenchError):
    """A file, record, or artifact this step depends on does not exist."""

    exit_code = 4


class NumericError(FsbenchError):
    """Non-finite values, divergence, or an undefined metric."""

    exit_code = 5


class TapeError(NumericError):
    """Backward requested on a tensor the active tape did not produce."""
