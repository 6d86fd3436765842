"""Exception taxonomy shared across the package.

The CLI maps these to exit codes: configuration problems (bad files, bad
arguments, mismatched shapes) exit with 2, numerical failures (non-finite
losses or gradients) exit with 3.
"""


class InputDomainError(ValueError):
    """An argument violates a documented precondition."""


class ConfigurationError(Exception):
    """Inconsistent or unreadable configuration, dataset, or checkpoint."""


class NumericalError(RuntimeError):
    """A computation produced non-finite values; carries a diagnostic snapshot."""

    def __init__(self, message, iteration=None, term=None):
        super().__init__(message)
        self.iteration = iteration
        self.term = term
