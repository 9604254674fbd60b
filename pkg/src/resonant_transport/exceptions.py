"""Exception hierarchy shared by all modules."""


class ResonantTransportError(Exception):
    """Base class for every error raised by this package."""


class InvalidGrid(ResonantTransportError, ValueError):
    pass


class InvalidFrequency(ResonantTransportError, ValueError):
    pass


class RegularizationFailed(ResonantTransportError):
    pass


class DiffeoNotInvertible(ResonantTransportError):
    pass


class ConvergenceFailure(ResonantTransportError):
    pass


class NormalFormFailed(ResonantTransportError):
    """A conjugation step lost invertibility; ``step`` is the 1-based index."""

    def __init__(self, message, step=None):
        super().__init__(message)
        self.step = step


class NotResonantlyStable(ResonantTransportError):
    pass


class IntegrationFailure(ResonantTransportError):
    pass


class NoHyperbolicStructure(ResonantTransportError):
    pass


class DegenerateVectorField(ResonantTransportError):
    pass


class EscapeConstructionFailed(ResonantTransportError):
    """Verification found a non-positive bracket margin at ``x``."""

    def __init__(self, message, x=None, margin=None):
        super().__init__(message)
        self.x = x
        self.margin = margin


class RegionTooSmall(ResonantTransportError):
    pass


class DimensionError(ResonantTransportError, ValueError):
    pass


class StepFailure(ResonantTransportError):
    pass


class InvalidSeries(ResonantTransportError, ValueError):
    pass


class WrongRegime(ResonantTransportError):
    pass


class ConfigError(ResonantTransportError, ValueError):
    pass
