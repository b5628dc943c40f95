"""Exception types shared across the package."""


class InputError(ValueError):
    """Malformed or out-of-contract arguments."""


class NumericalError(ArithmeticError):
    """A factorization or solve failed even after jitter."""


class EnvironmentEmptyError(InputError):
    """No samples are available for the requested environment."""

    def __init__(self, environment):
        super().__init__(
            f"no proxy-bearing samples for environment {environment!r}; "
            "query the environment before fitting or predicting with it"
        )
        self.environment = environment


class BudgetExhausted(RuntimeError):
    """The candidate pool cannot supply the requested number of queries."""


class ConfigError(InputError):
    """An experiment configuration failed validation."""
