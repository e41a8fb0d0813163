"""Exception types shared across the package (mapped to CLI exit codes)."""


class ConfigError(ValueError):
    """Invalid or unresolvable run configuration (exit code 2)."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        super().__init__(message if line is None else f"line {line}: {message}")


class NumericalInstability(RuntimeError):
    """Non-finite values appeared during time stepping (exit code 3)."""


class BudgetExhausted(RuntimeError):
    """A solver budget ran out before the requested quantity was resolved (exit code 4)."""


class DomainTooSmall(ValueError):
    """The truncated domain cannot contain the run up to the requested horizon."""
