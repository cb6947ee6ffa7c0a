"""Supervised dictionary learning with auxiliary covariates."""

from .errors import ArgumentError, NumericError

__version__ = "0.1.0"

__all__ = ["ArgumentError", "NumericError", "__version__"]
