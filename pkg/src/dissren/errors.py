"""Exception types shared across the package."""


class DissrenError(Exception):
    pass


class ConfigurationError(DissrenError, ValueError):
    pass


class DomainError(DissrenError, ValueError):
    pass


class SingularityError(DissrenError, ArithmeticError):
    pass


class IterationError(DissrenError, RuntimeError):
    def __init__(self, message, last_iterate=None):
        super().__init__(message)
        self.last_iterate = last_iterate


class CapacityError(DissrenError, ValueError):
    pass


class UnsupportedWordError(DissrenError, TypeError):
    pass


class TruncationOverflow(DissrenError, RuntimeError):
    pass


class StiffnessError(DissrenError, RuntimeError):
    pass


class IntegratorError(DissrenError, RuntimeError):
    pass


class VerificationFailure(DissrenError, AssertionError):
    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report
