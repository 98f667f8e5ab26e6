"""Exception hierarchy shared by all modules."""


class PomsError(Exception):
    """Base class for every error raised by this package."""


class DimensionMismatch(PomsError, ValueError):
    pass


class NotSymmetric(PomsError, ValueError):
    pass


class DecompositionFailed(PomsError, ArithmeticError):
    pass


class TooFewPoints(PomsError, ValueError):
    pass


class EmptySample(PomsError, ValueError):
    pass


class InsufficientData(PomsError, ValueError):
    pass


class LengthMismatch(PomsError, ValueError):
    pass


class NonFiniteParams(PomsError, ValueError):
    pass


class EmptyCollection(PomsError, ValueError):
    pass


class DivergedLoss(PomsError, ArithmeticError):
    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report


class NonFiniteDescriptor(PomsError, ValueError):
    pass


class EmptyArchive(PomsError, LookupError):
    pass


class ShapeMismatch(PomsError, ValueError):
    pass


class ConfigInvalid(PomsError, ValueError):
    pass


class NoCurves(PomsError, ValueError):
    pass


class ParseError(PomsError, ValueError):
    pass
