"""Error types raised across the package.

Everything derives from PrymLabError so callers can catch broadly.  The
names describe the failure, not the routine that raised it; several are
shared between modules (PrecisionLoss comes out of quadrature, ODE transport
and Richardson extrapolation alike).
"""


class PrymLabError(Exception):
    pass


class DuplicateRoots(PrymLabError):
    """curve polynomial has a repeated root (or numerically too close)"""


class DegenerateZeros(PrymLabError):
    """quadratic differential numerator is degenerate (leading coefficient
    or discriminant vanishes)"""


class ZeroAtBranchPoint(PrymLabError):
    """a zero of the quadratic differential collides with a branch point"""


class NearSingularPoint(PrymLabError):
    """evaluation requested inside the exclusion disk of a singular point"""


class AmbiguousContinuation(PrymLabError):
    """sheet tracking cannot decide a branch; path passes too close to a
    branch point for the requested step"""


class MarkingFailure(PrymLabError):
    """could not build a symplectic marking with the required intersection
    table on this surface"""


class InvalidMove(PrymLabError):
    """requested generator move is not available from the routing data"""


class TangencyDetected(PrymLabError):
    """two polylines touch without crossing transversally; the caller must
    perturb before intersection numbers make sense"""


class NontrivialHolonomy(PrymLabError):
    """loop does not lift to the double cover (odd number of zeros inside)"""


class NotSymplectic(PrymLabError):
    """matrix fails the symplectic condition"""


class CollisionCourse(PrymLabError):
    """a deformation path would drive singular points into each other"""


class PrecisionLoss(PrymLabError):
    """adaptive refinement hit its budget before reaching tolerance"""


class SingularNormalization(PrymLabError):
    """normalization system is singular; periods do not determine the
    requested differential"""


class IllConditioned(PrymLabError):
    """Jacobian condition number exceeds the trust threshold"""


class NoConvergence(PrymLabError):
    """iteration failed to converge within its step budget"""


class LeftChart(PrymLabError):
    """point left the coordinate chart (pinned roots no longer pinned)"""


class NotPositiveDefinite(PrymLabError):
    """imaginary part of the period matrix is not positive definite"""


class NearThetaNull(PrymLabError):
    """an even theta constant is too close to zero for stable logarithms"""


class DiagonalTooClose(PrymLabError):
    """kernel evaluation requested too close to the diagonal"""


class ExtrapolationUnstable(PrymLabError):
    """Richardson extrapolation disagrees between step sizes"""


class WirtingerSingular(PrymLabError):
    """Wirtinger connection undefined: a theta constant vanishes"""


class StepFailure(PrymLabError):
    """ODE step size underflow"""


class PathThroughZero(PrymLabError):
    """integration path passes through (or too near) a zero or pole of the
    integrand's defining data"""
