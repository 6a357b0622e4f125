"""Exception types shared across the package.

Everything user-facing derives from LdstyleError so the CLI can map
package errors to exit code 1 and keep exit code 2 for genuine bugs.
"""


class LdstyleError(Exception):
    """Base class for all errors raised by this package."""


class DecodeError(LdstyleError):
    """An image file could not be read or decoded."""


class DimensionError(LdstyleError):
    """Array/image dimensions violate an operation's contract."""


class ArgumentError(LdstyleError):
    """An argument value is invalid (empty layer list, mismatched lengths, ...)."""


class BackendUnavailableError(LdstyleError):
    """A pretrained backend was requested but its weights are missing."""


class CheckpointFormatError(LdstyleError):
    """An archive has the wrong schema version or is missing/mistyping tensors."""


class CorruptionError(LdstyleError):
    """An archive file is truncated or has the wrong magic bytes."""


class DatasetError(LdstyleError):
    """A training dataset directory is empty or unusable."""


class TrainingDivergenceError(LdstyleError):
    """The training loss became non-finite."""

    def __init__(self, iteration, message=None):
        self.iteration = iteration
        super().__init__(message or f"non-finite loss at iteration {iteration}")
