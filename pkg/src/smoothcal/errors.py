"""Exception types shared across the package."""


class SmoothcalError(Exception):
    """Base class for all package-specific errors."""


class ShapeError(SmoothcalError, ValueError):
    """Array dimensions do not match what an operation requires."""


class NumericError(SmoothcalError, ValueError):
    """Non-finite values where finite numbers are required."""


class ConfigError(SmoothcalError, ValueError):
    """Invalid configuration value or unreachable configuration target."""


class TrainingDiverged(SmoothcalError, RuntimeError):
    """Training produced a non-finite loss; carries the offending epoch."""

    def __init__(self, epoch: int, loss: float):
        self.epoch = epoch
        self.loss = loss
        super().__init__(f"non-finite training loss {loss!r} at epoch {epoch}")
