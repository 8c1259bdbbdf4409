"""Exception types shared across the package."""


class CountcastError(Exception):
    """Base class for all errors raised by countcast."""


class DomainError(CountcastError, ValueError):
    """An argument lies outside the mathematical domain of a function."""


class ConfigError(CountcastError, ValueError):
    """A model or run configuration is invalid."""


class InputError(CountcastError, ValueError):
    """Observed data or covariates are missing, malformed or misaligned."""


class NumericalError(CountcastError, ArithmeticError):
    """A numerical routine failed; ``diagnostics`` holds the offending values."""

    def __init__(self, message, **diagnostics):
        super().__init__(message)
        self.diagnostics = diagnostics

    def __str__(self):
        base = super().__str__()
        if not self.diagnostics:
            return base
        detail = ", ".join(f"{k}={v!r}" for k, v in self.diagnostics.items())
        return f"{base} ({detail})"
