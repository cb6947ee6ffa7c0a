"""Exception types shared across the toolkit."""


class ArgumentError(ValueError):
    """Bad shapes, out-of-range parameters or malformed input files."""


class NumericError(ArithmeticError):
    """Non-finite values or a failed decomposition."""
