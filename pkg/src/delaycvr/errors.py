"""Exception types shared across the package.

The CLI maps these onto its exit-code contract: configuration and usage
problems exit 1, runtime failures exit 2.
"""


class DelayCvrError(Exception):
    """Base class for all package errors."""


class InvalidInputError(DelayCvrError, ValueError):
    """An argument violates an operation's precondition."""


class ConfigError(DelayCvrError, ValueError):
    """A configuration value or file is invalid."""


class MissingGroundTruthError(DelayCvrError, ValueError):
    """An operation needs generator-only fields (y_true, theta_true, ...)
    that the given dataset does not carry."""


class DivisionGuardError(DelayCvrError, ZeroDivisionError):
    """A zero denominator was hit with clipping disabled."""


class TrainingDivergedError(DelayCvrError, RuntimeError):
    """Training produced a non-finite loss or gradient."""

    def __init__(self, message: str, epoch: int | None = None):
        super().__init__(message)
        self.epoch = epoch
