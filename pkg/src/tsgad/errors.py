"""Exception types shared across the package.

The CLI maps these onto exit codes: configuration/usage problems exit 1,
data problems exit 2, numeric failures exit 3, property-suite failures 4.
"""


class ConfigError(ValueError):
    """A parameter combination or run specification is invalid."""


class DataFormatError(ValueError):
    """An input file could not be parsed or has an impossible schema."""


class CheckpointError(ValueError):
    """A checkpoint file is corrupt, incomplete, or has the wrong version."""


class MetricUndefinedError(ValueError):
    """A requested metric is undefined for the given labels (e.g. one class)."""


class DivergenceError(RuntimeError):
    """Training produced a non-finite loss; carries epoch/batch coordinates."""
