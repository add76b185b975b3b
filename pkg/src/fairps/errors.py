"""Exception hierarchy shared by every module."""


class FairPSError(Exception):
    """Base class for library errors."""


class DimensionMismatch(FairPSError, ValueError):
    pass


class FractionSumInvalid(FairPSError, ValueError):
    pass


class EmptyGroup(FairPSError, ValueError):
    pass


class DimensionUnsupported(FairPSError, ValueError):
    pass


class IncompatibleModel(FairPSError, TypeError):
    pass


class NonDifferentiableFamily(FairPSError, TypeError):
    pass


class WeightMismatch(FairPSError, ValueError):
    pass


class TooManyGroups(FairPSError, ValueError):
    pass


class NegativeRadius(FairPSError, ValueError):
    pass


class NoCertificate(FairPSError):
    pass


class GroupCountMismatch(FairPSError, ValueError):
    pass


class InvalidEpsilon(FairPSError, ValueError):
    pass


class DegenerateProbe(FairPSError, ValueError):
    pass


class DidNotConverge(FairPSError, RuntimeError):
    def __init__(self, message, theta=None, grad_norm=None):
        super().__init__(message)
        self.theta = theta
        self.grad_norm = grad_norm


class NotOneDimensional(FairPSError, ValueError):
    pass


class NotBinaryLabels(FairPSError, ValueError):
    pass


class NotAFixedPoint(FairPSError):
    pass


class NotConverged(FairPSError):
    pass


class TooShort(FairPSError, ValueError):
    pass


class SingleGroup(FairPSError, ValueError):
    pass


class ParseError(FairPSError, ValueError):
    pass


class ValidationError(FairPSError, ValueError):
    def __init__(self, problems):
        if isinstance(problems, str):
            problems = [problems]
        self.problems = list(problems)
        super().__init__("; ".join(self.problems))


class NonNumericFeature(FairPSError, ValueError):
    pass


class BadColumn(FairPSError, KeyError):
    pass


class RoundError(FairPSError):
    """Wraps a solver failure with the round at which it happened."""

    def __init__(self, round_index, cause):
        super().__init__(f"round {round_index}: {cause}")
        self.round_index = round_index
        self.cause = cause
