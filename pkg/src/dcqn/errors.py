"""Exception types shared across the package."""


class DcqnError(Exception):
    """Base class for all errors raised by this package."""


class SchemaError(DcqnError):
    """CSV schema mapping does not match the file."""


class RowParseError(DcqnError):
    """A CSV row could not be parsed; carries the 1-based line number."""

    def __init__(self, line: int, message: str):
        super().__init__(f"line {line}: {message}")
        self.line = line


class InsufficientDataError(DcqnError):
    """Too few samples for the requested operation."""


class DimensionError(DcqnError):
    """Array shapes are inconsistent with the operation's contract."""


class DomainError(DcqnError):
    """A value lies outside the mathematical domain of the operation."""


class ParameterSetError(DcqnError):
    """A named parameter tensor is missing or has the wrong shape."""


class DegenerateFeatureError(DcqnError):
    """Backbone features collapsed; a factor row cannot be normalized."""


class ConditioningError(DcqnError):
    """A triangular factor is numerically singular."""


class TrainingDivergedError(DcqnError):
    """Training produced a non-finite loss; carries the epoch index."""

    def __init__(self, epoch: int, message: str = ""):
        detail = f" ({message})" if message else ""
        super().__init__(f"non-finite loss at epoch {epoch}{detail}")
        self.epoch = epoch


class CheckpointFormatError(DcqnError):
    """Checkpoint file is malformed or has an unsupported version."""


class ConfigError(DcqnError):
    """Run configuration is invalid or contains unknown keys."""
