"""Exception hierarchy shared across the package.

The CLI maps these onto exit codes: ConfigError -> 2, DataError -> 3,
NumericError -> 4.
"""


class NbrecError(Exception):
    """Base class for all package errors."""


class ConfigError(NbrecError):
    """Invalid or inconsistent run configuration."""


class DataError(NbrecError):
    """Malformed input data (parse failures, duplicates, shape mismatches)."""


class ParseError(DataError):
    def __init__(self, path, line_no, message):
        self.path = path
        self.line_no = line_no
        super().__init__(f"{path}:{line_no}: {message}")


class DuplicateError(DataError):
    """A (user, item) pair occurred more than once within one split."""


class NumericError(NbrecError):
    """Numerical failure (non-finite loss, degenerate denominator, ...)."""


class TrainingError(NumericError):
    """Training aborted, e.g. because the loss became non-finite."""
