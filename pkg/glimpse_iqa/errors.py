"""Define package errors."""
from typing import Dict, Type


class GlimpseIQAError(Exception):
    """Define a base error."""

    pass


class ShapeError(GlimpseIQAError):
    """Define an error for tensors whose shapes do not conform."""

    pass


class NonFiniteError(GlimpseIQAError):
    """Define an error for a NaN or Inf produced by a computation."""

    pass


class ConfigError(GlimpseIQAError):
    """Define an error related to invalid configuration."""

    pass


class DatasetError(GlimpseIQAError):
    """Define an error related to loading or splitting a dataset."""

    pass


class CheckpointError(GlimpseIQAError):
    """Define an error for unreadable or mismatched checkpoints."""

    pass


class DegenerateMetricError(GlimpseIQAError):
    """Define an error for a correlation that is undefined on its inputs."""

    pass


class SplitFailedError(GlimpseIQAError):
    """Define an error for a split run that did not complete."""

    pass


EXIT_CODES: Dict[Type[GlimpseIQAError], int] = {
    ConfigError: 2,
    DatasetError: 3,
    CheckpointError: 4,
    NonFiniteError: 5,
    ShapeError: 6,
    DegenerateMetricError: 7,
    SplitFailedError: 8,
}


def exit_code_for(err: Exception) -> int:
    """Return the process exit code for an error."""
    for cls in type(err).__mro__:
        if cls in EXIT_CODES:
            return EXIT_CODES[cls]
    return 1
