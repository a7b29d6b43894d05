"""Exception hierarchy shared by every module of the package."""


class CodaError(Exception):
    """Base class for all errors raised by ``coda_subspace``."""


class NonPositiveEntry(CodaError, ValueError):
    pass


class DimensionTooSmall(CodaError, ValueError):
    pass


class DimensionMismatch(CodaError, ValueError):
    pass


class TooFewRows(CodaError, ValueError):
    pass


class ConvergenceFailure(CodaError, ArithmeticError):
    pass


class InvalidDf(CodaError, ValueError):
    pass


class NotPositiveDefinite(CodaError, ValueError):
    pass


class ParseError(CodaError, ValueError):
    pass


class NegativeEntry(CodaError, ValueError):
    pass


class InconsistentZeroPattern(CodaError, ValueError):
    pass


class EmptyBlock(CodaError, ValueError):
    pass


class BadK(CodaError, ValueError):
    pass


class DegenerateEigengap(CodaError, ArithmeticError):
    """A population or sample eigengap used as a denominator is (nearly) zero."""


class ApproximationInvalid(CodaError, ArithmeticError):
    """The approximate null mean or variance came out non-positive."""


class ConfigError(CodaError, ValueError):
    pass
