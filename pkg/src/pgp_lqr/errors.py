"""Exception hierarchy shared by every module."""


class PGPError(Exception):
    """Base class for all errors raised by this package."""


class DimensionError(PGPError, ValueError):
    pass


class StabilityError(PGPError):
    """A closed-loop matrix that must be Hurwitz is not."""

    def __init__(self, message, abscissa=None):
        super().__init__(message)
        self.abscissa = abscissa


class NumericalError(PGPError, ArithmeticError):
    pass


class RankError(NumericalError):
    """A matrix required to have full column rank does not."""

    def __init__(self, message, smallest_singular_value=None):
        super().__init__(message)
        self.smallest_singular_value = smallest_singular_value


class DivergenceError(PGPError):
    """A rollout blew up (state norm or cost overflow)."""

    def __init__(self, message, gain=None):
        super().__init__(message)
        self.gain = gain


class EstimationError(PGPError):
    pass


class IdentifiabilityError(PGPError):
    """Bellman data do not determine the value model."""

    def __init__(self, message, rank=None, required=None):
        super().__init__(message)
        self.rank = rank
        self.required = required


class ConfigurationError(PGPError, ValueError):
    pass


class SystemFileError(PGPError, ValueError):
    """Malformed system / model / config document."""

    def __init__(self, message, field=None):
        super().__init__(message)
        self.field = field
