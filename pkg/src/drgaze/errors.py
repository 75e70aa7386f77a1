"""Exception hierarchy shared across the toolkit."""


class GazeToolkitError(Exception):
    """Base class for all toolkit errors."""


class DegenerateOutputError(GazeToolkitError):
    """A (near-)zero vector was produced where a direction is required."""


class ShapeError(GazeToolkitError):
    """Tensor or image dimensions do not match the configured model."""


class DataError(GazeToolkitError):
    """Dataset layout, label file, or dataset precondition problem."""


class MissingLabelError(GazeToolkitError):
    """A guidance label was required but not supplied (diff_nn only)."""


class CheckpointError(GazeToolkitError):
    """Checkpoint file is unreadable, truncated, or incompatible."""


class NumericError(GazeToolkitError):
    """Training or evaluation produced non-finite values."""


class UsageError(GazeToolkitError):
    """Invalid command-line invocation or configuration key."""
