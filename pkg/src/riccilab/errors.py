"""Exception types shared across the package."""


class RicciLabError(Exception):
    """Base class for all package errors."""


class NonSmoothPole(RicciLabError):
    """Pole closure (psi = 0, |psi_s| = 1) violated beyond tolerance."""


class DegenerateWarp(RicciLabError):
    """Interior warping factor collapsed below the resolvable scale."""


class CurvatureHypothesisFailed(RicciLabError):
    """A curvature lower-bound hypothesis required by a comparison check fails."""


class StepRejected(RicciLabError):
    """A time step produced an invalid metric; the caller should retry with smaller dt."""


class NonConvergence(RicciLabError):
    """Time step underflowed or an iteration failed to make progress."""


class IterationLimit(RicciLabError):
    """An iterative solver hit its iteration cap before reaching tolerance."""


class ConstraintViolated(RicciLabError):
    """A normalization constraint on a potential field is not satisfied."""


class NonPositiveMinimizer(RicciLabError):
    """The entropy minimizer developed a sign change."""


class BackwardInstability(RicciLabError):
    """The backward conjugate-heat solve lost positivity."""


class LeftDomain(RicciLabError):
    """A shot geodesic exited the time range of the stored leg."""


class BlowupOnPath(RicciLabError):
    """A shot geodesic entered a region above the leg's curvature validity threshold."""


class CoverageGap(RicciLabError):
    """The shooting family left part of the profile unreachable."""


class JacobianIllConditioned(RicciLabError):
    """Jacobian finite differences degenerate near a fold."""


class HypothesisFailed(RicciLabError):
    """A monitor's theorem hypothesis is not satisfied on the supplied data."""


class NotNormalized(RicciLabError):
    """Initial data is not normalized as the pinching check assumes."""


class NeckTooCoarse(RicciLabError):
    """The certified neck quality is insufficient for the requested surgery."""


class ResolutionLoss(RicciLabError):
    """Too few nodes would span a surgical cap."""


class ParameterInfeasible(RicciLabError):
    """Standard-cap construction parameters admit no valid interpolation."""


class ScenarioError(RicciLabError):
    """A scenario file is malformed or fails validation."""

    def __init__(self, message, field=None):
        super().__init__(message if field is None else f"{field}: {message}")
        self.field = field
