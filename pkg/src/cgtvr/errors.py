"""Exception types shared across the package."""


class ConfigurationError(ValueError):
    """A run or experiment configuration is invalid or infeasible."""

    def __init__(self, message, key=None):
        super().__init__(message)
        self.key = key


class DomainError(ValueError):
    """A smoothness model was evaluated outside its domain."""


class DegenerateNetworkError(ValueError):
    """The mixing matrix does not contract disagreement (eta >= 1)."""


class GenerationError(RuntimeError):
    """Random topology generation gave up."""


class IngestionError(ValueError):
    """No usable rows could be read from a dataset."""


class NumericError(ArithmeticError):
    """A numerical routine failed to produce a finite or bracketed answer."""


class DivergenceError(NumericError):
    """An optimizer produced a non-finite value.

    ``last_row`` holds the last fully finite metrics row, if any.
    """

    def __init__(self, message, last_row=None, t=None):
        super().__init__(message)
        self.last_row = last_row
        self.t = t
