"""Exception types shared across the package."""


class ValidationError(ValueError):
    """An argument or configuration value violates a documented precondition."""


class ShapeError(ValidationError):
    """Operands do not share the required grid shape."""


class SingularityError(ArithmeticError):
    """A denominator that the schedule invariants should keep nonzero hit zero."""


class ScheduleIncompatibleError(ValidationError):
    """A stochastic-noise rule is incompatible with the schedule at some timestep."""


class UndefinedMetricError(ValueError):
    """A metric is undefined for the given inputs (e.g. a mask with no boundary)."""


class ConfigError(ValidationError):
    """An experiment config failed validation.

    ``key`` holds the dotted path of the offending entry so the CLI can emit a
    structured report.
    """

    def __init__(self, key: str, message: str):
        self.key = key
        self.message = message
        super().__init__(f"{key}: {message}")
