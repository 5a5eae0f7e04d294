"""Error types for harness picking.

Every user-facing failure carries the process exit code the CLI returns for it:
2 for configuration problems, 3 for bad data, 4 for numeric divergence.
"""
from typing import Optional


class HarnessPickingError(Exception):
    """Base class for all expected failures."""
    exit_code = 1


class ConfigError(HarnessPickingError):
    """Invalid configuration or parameter."""
    exit_code = 2


class DataError(HarnessPickingError):
    """Malformed or unusable input data."""
    exit_code = 3

    def __init__(self, message: str, line: Optional[int] = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class InvalidGraspError(DataError):
    """Grasp does not lie on the requested target."""


class InvalidDepthError(DataError):
    """Grasp pixel carries no valid depth reading."""


class EmptyInputError(DataError):
    """An operation received an empty grasp set or dataset."""


class ModelCompatibilityError(DataError):
    """Feature layout does not match the model's metadata."""


class PreconditionError(DataError):
    """A documented precondition of an operation was violated."""


class TrainingDivergenceError(HarnessPickingError):
    """Loss became NaN or infinite during training."""
    exit_code = 4

    def __init__(self, epoch: int, loss: float):
        self.epoch = epoch
        self.loss = loss
        super().__init__(f"training diverged at epoch {epoch} (loss={loss})")
