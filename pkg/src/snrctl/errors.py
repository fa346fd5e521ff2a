"""Exception and warning types raised by :mod:`snrctl`."""


class SnrCtlError(Exception):
    """Base class for all errors raised by this package."""


class PoleOnCircle(SnrCtlError):
    """A transfer function was evaluated at a pole on the unit circle."""


class ZeroOnCircle(SnrCtlError):
    """A factor that must be invertible on the unit circle vanishes there."""


class Unstable(SnrCtlError):
    """A stable transfer function was required."""


class DimensionMismatch(SnrCtlError):
    pass


class NonzeroD22(SnrCtlError):
    """The measurement-to-control feedthrough of the plant is not zero."""


class NotStabilizable(SnrCtlError):
    pass


class NotDetectable(SnrCtlError):
    pass


class NotPositive(SnrCtlError):
    """A trigonometric polynomial is not strictly positive on the circle."""


class NonNormalizedChannel(SnrCtlError):
    """The channel spectral factor does not have unit H2 norm."""


class OutsideDomain(SnrCtlError):
    """A Youla parameter violates the channel power constraint."""


class IdenticallyZeroDenominator(SnrCtlError):
    pass


class PerturbationFailed(SnrCtlError):
    """Circle roots of ``N Q + V`` could not be displaced."""

    def __init__(self, message, roots=None, residuals=None):
        super().__init__(message)
        self.roots = roots
        self.residuals = residuals


class GridTooCoarse(SnrCtlError):
    pass


class Infeasible(SnrCtlError):
    """No FIR Youla parameter meets the SNR constraint.

    Attributes
    ----------
    threshold_estimate : float
        Smallest achievable channel power over the FIR basis on the grid.
    report : object
        Solver report, when available.
    """

    def __init__(self, message, threshold_estimate=float("nan"), report=None):
        super().__init__(message)
        self.threshold_estimate = threshold_estimate
        self.report = report


class AlphaNonpositive(SnrCtlError):
    """The nominal controller leaves no channel power for the encoder."""


class DegenerateLoop(SnrCtlError):
    pass


class UnstableLoop(SnrCtlError):
    pass


class InternalStabilityFailed(SnrCtlError):
    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report


class FactorizationFailed(SnrCtlError):
    pass


class ConfigError(SnrCtlError):
    pass


class SpectralFitDegraded(UserWarning):
    """The rational encoder fit has a relative residual above 5 %."""
