"""Mortgage-payment wedge exposures and fixed-effects panel estimation."""

from mpwedge.errors import (ConvergenceError, InsufficientDataError, InvalidInputError,
                            MpwedgeError, RankError, ValidationError)

__version__ = "0.1.0"

__all__ = [
    "ConvergenceError", "InsufficientDataError", "InvalidInputError", "MpwedgeError",
    "RankError", "ValidationError", "__version__",
]
