"""Exception and warning types raised across the package."""


class InvLearnError(Exception):
    """Base class for all package errors."""


class NonSymmetric(InvLearnError, ValueError):
    pass


class NoConvergence(InvLearnError, RuntimeError):
    pass


class DimensionMismatch(InvLearnError, ValueError):
    pass


class InvalidDecay(InvLearnError, ValueError):
    pass


class InvalidTruncation(InvLearnError, ValueError):
    pass


class NonPositiveLambda(InvLearnError, ValueError):
    pass


class InvalidLinkParameter(InvLearnError, ValueError):
    pass


class OutOfDomain(InvLearnError, ValueError):
    pass


class TruncationTooLarge(InvLearnError, ValueError):
    pass


class DomainViolation(InvLearnError, ValueError):
    pass


class RowConstraintViolated(InvLearnError, ValueError):
    pass


class ConditionViolated(InvLearnError, ValueError):
    pass


class EmptyValidationSet(InvLearnError, ValueError):
    pass


class NonPositiveError(InvLearnError, ValueError):
    pass


class FailureRateExceeded(InvLearnError, RuntimeError):
    def __init__(self, message, result=None):
        super().__init__(message)
        self.result = result


class DegenerateEigenvalues(InvLearnError, ArithmeticError):
    pass


class InvLearnWarning(UserWarning):
    pass


class RankDeficientWarning(InvLearnWarning):
    pass


class NotConvergedWarning(InvLearnWarning):
    pass


class SmoothnessOutOfRange(InvLearnWarning):
    pass


class LambdaFloorWarning(InvLearnWarning):
    pass
