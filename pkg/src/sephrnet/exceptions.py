"""Exception hierarchy shared across the package."""


class SepHRNetError(Exception):
    """Base class for all package errors."""


class ConfigurationError(SepHRNetError, ValueError):
    """Invalid shapes, hyperparameters or architecture descriptions."""


class UsageError(SepHRNetError, ValueError):
    """An API was called in a way its contract forbids."""


class GraphError(SepHRNetError, RuntimeError):
    """Reverse-mode graph misuse, e.g. a second backward pass."""


class UninitializedStatsError(SepHRNetError, RuntimeError):
    """Batch norm evaluated before any running statistics were recorded."""


class DataError(SepHRNetError, ValueError):
    """Labels or scenes violating their declared ranges."""


class FormatError(SepHRNetError, ValueError):
    """Malformed, truncated or version-incompatible binary containers."""


class EmptySequenceError(SepHRNetError, ValueError):
    """A temporal aggregator received zero frames."""


class DivergenceError(SepHRNetError, FloatingPointError):
    """Training produced a non-finite loss."""

    def __init__(self, epoch: int, batch: int, loss: float):
        self.epoch = epoch
        self.batch = batch
        self.loss = loss
        super().__init__(f"non-finite loss {loss!r} at epoch {epoch}, batch {batch}")


class IncompatibleCheckpointError(FormatError):
    """A checkpoint written by a different format version or architecture."""
