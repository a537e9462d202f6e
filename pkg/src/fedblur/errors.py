"""Exception hierarchy shared by every module."""


class FedBlurError(Exception):
    """Base class for all package errors."""


class ConfigError(FedBlurError, ValueError):
    """Invalid or inconsistent configuration (bad shapes, bad hyperparameters)."""


class DataError(FedBlurError, ValueError):
    """Malformed or non-finite input data."""

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class QueryError(FedBlurError):
    """A query was made against state that cannot answer it (e.g. an empty ledger)."""


class CalibrationError(FedBlurError):
    """No noise multiplier in the search range reaches the requested budget."""


class AgentFailure(FedBlurError):
    """Local training diverged (non-finite loss) on one agent."""
