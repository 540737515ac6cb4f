"""Exception types shared across the package."""

from __future__ import annotations


class MpwedgeError(Exception):
    """Base class for all package errors."""


class InvalidInputError(MpwedgeError, ValueError):
    """An argument is outside the domain of the operation."""


class InsufficientDataError(MpwedgeError, ValueError):
    """Too few observations remain to carry out the computation."""


class RankError(MpwedgeError, ValueError):
    """A design matrix is rank deficient.

    ``columns`` lists the offending column names when they can be identified.
    """

    def __init__(self, message: str, columns: list[str] | None = None):
        super().__init__(message)
        self.columns = list(columns or [])


class ConvergenceError(MpwedgeError, RuntimeError):
    """An iterative routine did not converge; ``trace`` holds its history."""

    def __init__(self, message: str, trace: list | None = None):
        super().__init__(message)
        self.trace = list(trace or [])


class ValidationError(MpwedgeError, ValueError):
    """An input file failed schema validation."""

    def __init__(self, message: str, file: str | None = None, line: int | None = None,
                 column: str | None = None):
        loc = []
        if file is not None:
            loc.append(str(file))
        if line is not None:
            loc.append(f"line {line}")
        if column is not None:
            loc.append(f"column {column!r}")
        super().__init__(f"{': '.join([', '.join(loc), message]) if loc else message}")
        self.file = file
        self.line = line
        self.column = column
