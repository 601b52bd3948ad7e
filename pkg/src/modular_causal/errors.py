"""Exception hierarchy. Each class maps onto one CLI exit code."""


class ModularCausalError(Exception):
    exit_code = 1


class ValidationError(ModularCausalError, ValueError):
    """Malformed graph, SCM file, dataset, checkpoint or argument."""

    exit_code = 2


class UntrainableError(ModularCausalError):
    """A query or a plan stage cannot be served from the available data."""

    exit_code = 3


class NotIdentifiableError(UntrainableError):
    pass


class NumericError(ModularCausalError, ArithmeticError):
    """Zero-probability conditioning, NaN losses, enumeration cap exceeded."""

    exit_code = 4
