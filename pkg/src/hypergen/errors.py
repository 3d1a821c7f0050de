"""Exception types raised across the package."""


class HypergenError(Exception):
    """Base class for all package errors."""


class FormatError(HypergenError, ValueError):
    """A hypergraph or matrix file could not be parsed."""

    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class ValidationError(HypergenError, ValueError):
    """Input violates a structural invariant (negative id, bad shape, ...)."""


class EmptyInputError(HypergenError, ValueError):
    """An operation needs at least one hyperlink."""


class DegenerateInputError(HypergenError, ValueError):
    """The hypergraph carries no information for estimation (all-empty or complete)."""


class ConfigError(HypergenError, ValueError):
    """A configuration value is out of its admissible range."""


class SingularityError(HypergenError, ArithmeticError):
    """A matrix that must be full rank is not."""


class NumericalFailure(HypergenError, ArithmeticError):
    """Non-finite values appeared during estimation."""

    def __init__(self, message, iteration=None):
        self.iteration = iteration
        if iteration is not None:
            message = f"{message} (iteration {iteration})"
        super().__init__(message)


class DivergenceError(HypergenError, ArithmeticError):
    """Training loss or sampler state became non-finite."""

    def __init__(self, message, epoch=None, step=None):
        self.epoch = epoch
        self.step = step
        where = []
        if epoch is not None:
            where.append(f"epoch {epoch}")
        if step is not None:
            where.append(f"step {step}")
        if where:
            message = f"{message} ({', '.join(where)})"
        super().__init__(message)
