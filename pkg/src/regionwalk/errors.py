"""Exception types shared across the package."""


class InputError(ValueError):
    """Invalid caller-supplied data: bad shapes, empty inputs, zero directions."""


class NumericError(ArithmeticError):
    """Non-finite values or numerical breakdown during evaluation."""


class FormatError(ValueError):
    """Malformed model or tensor files."""
