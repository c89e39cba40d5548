"""Exception types shared across the package."""


class DimensionError(ValueError):
    """Operand shapes are inconsistent with the operation."""


class GeometryError(ValueError):
    """Sampling geometry violates a divisibility or extent constraint."""


class ContractError(ValueError):
    """An input breaks a documented contract (e.g. asymmetric kernel matrix)."""


class SingularityError(ArithmeticError):
    """A symmetric solve hit a non-positive-definite pivot."""

    def __init__(self, pivot):
        self.pivot = pivot
        super().__init__(
            f"matrix is not positive definite: leading minor of order {pivot} "
            f"is singular or negative (pivot {pivot})"
        )


class NumericError(ArithmeticError):
    """A computation produced non-finite values."""


class SequenceSpecError(ValueError):
    """A synthetic sequence spec is inconsistent (e.g. path leaves the frame)."""


class ParseError(ValueError):
    """A sequence directory or ground-truth file is malformed."""


class ConfigError(ValueError):
    """A run configuration value or key is invalid."""
