class DimensionError(ValueError):
    """Operand shapes are incompatible."""


class NumericError(ArithmeticError):
    """NaN or Inf reached a place where values must be finite."""


class ContractError(ValueError):
    """A caller broke an operation's precondition."""
