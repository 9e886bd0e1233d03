"""Shared exception types."""


class ModelSyntaxError(ValueError):
    """Raised when model syntax text cannot be parsed.

    Carries the 1-based line and column of the offending token when known.
    """

    def __init__(self, message, line=None, column=None):
        self.line = line
        self.column = column
        if line is not None:
            where = f"line {line}"
            if column is not None:
                where += f", column {column}"
            message = f"{message} ({where})"
        super().__init__(message)


class DataError(ValueError):
    """Raised for degenerate or malformed input data."""


class ScoringError(RuntimeError):
    """Raised when factor scores cannot be computed from a fit."""


class SequentialStageError(RuntimeError):
    """Raised when a stage of the sequential pipeline fails.

    Attributes
    ----------
    stage : int
        1-based index of the failing stage.
    status : str or None
        Fit status name when the stage produced a fit at all.
    """

    def __init__(self, stage, message, status=None):
        self.stage = stage
        self.status = status
        super().__init__(f"stage {stage}: {message}")


class AllReplicationsFailedError(RuntimeError):
    """Raised when every replication of a simulation grid failed."""
