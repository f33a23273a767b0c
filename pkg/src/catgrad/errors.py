"""Exception types raised across the package."""


class InvalidArgumentError(ValueError):
    """An argument violates a documented precondition."""


class CapacityError(InvalidArgumentError):
    """Exhaustive enumeration would exceed the configured outcome cap."""

    def __init__(self, n_outcomes, cap):
        self.n_outcomes = n_outcomes
        self.cap = cap
        super().__init__(
            f"enumeration of {n_outcomes} joint outcomes exceeds the cap of {cap}"
        )


class NumericGuardError(ArithmeticError):
    """A quantity fell into a range where the estimator is numerically unstable."""


class ConfigError(InvalidArgumentError):
    """An experiment configuration field is invalid.

    ``field`` names the offending key so CLI errors can point at it.
    """

    def __init__(self, field, message):
        self.field = field
        super().__init__(f"{field}: {message}")
