"""Exception types shared across the package."""


class InvalidInputError(ValueError):
    pass


class RankZeroError(InvalidInputError):
    """Every singular value sits below the rank threshold."""


class DomainError(InvalidInputError):
    """Argument outside the domain of a closed-form evaluator."""


class RestrictedInjectivityUnavailable(InvalidInputError):
    """mu_F cannot be certified for this operator (non-square or rank deficient)."""


class GuaranteeUnavailable(InvalidInputError):
    """The hypotheses behind a bound do not hold, so no value is returned."""


class BoundaryUndefinedError(ValueError):
    """No level crossing in any column of a phase grid."""


class DivergenceError(FloatingPointError):
    """Training produced a non-finite loss. ``trace`` holds what was recorded."""

    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = trace
