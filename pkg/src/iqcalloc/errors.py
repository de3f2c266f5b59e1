"""Exception types shared across the package."""


class IqcAllocError(Exception):
    """Base class for all library-specific failures."""


class DimensionMismatch(IqcAllocError):
    """Operands have incompatible shapes or partitions."""


class NotSymmetric(IqcAllocError):
    """A matrix required to be symmetric is not, beyond tolerance."""


class RankDeficient(IqcAllocError):
    """A matrix required to have full rank is numerically rank-deficient."""


class Unbounded(IqcAllocError):
    """The objective of a conic program is unbounded below."""


class NumericalFailure(IqcAllocError):
    """Every attempted solver backend failed to return a verdict."""


class Infeasible(IqcAllocError):
    """A feasibility problem admits no solution."""


class NotStabilityMultiplier(IqcAllocError):
    """The supply rate has the wrong sign pattern for a BIBO certificate."""


class Unstable(IqcAllocError):
    """The system matrix is not Hurwitz where stability is required."""


class SingularMultiplier(IqcAllocError):
    """A supply-rate matrix that must be inverted is numerically singular."""


class InfeasibleAtHi(IqcAllocError):
    """Bisection cannot start: the upper endpoint is already infeasible."""


class NonMonotone(IqcAllocError):
    """Feasibility along the sampled bisection grid is not monotone."""


class SingularCoupling(IqcAllocError):
    """I - Q2 @ Q1 is singular; storage reconstruction is impossible."""


class NotWellPosed(IqcAllocError):
    """The routing matrix fails the invertibility preconditions."""


class NotALocalization(IqcAllocError):
    """The candidate multipliers do not satisfy the allocation inequality."""


class NegativeGapSquared(IqcAllocError):
    """Local performance level is below the global one; gap undefined."""


class NotEquivalence(IqcAllocError):
    """A grouping matrix is not a valid equivalence-relation membership."""


class MaxIterReached(IqcAllocError):
    """Iteration budget exhausted before convergence.

    Carries the best iterate so the caller can inspect residuals.
    """

    def __init__(self, message, state=None):
        super().__init__(message)
        self.state = state


class SeedInfeasible(IqcAllocError):
    """No subsystem-level certificate exists even at the seed level."""


class ParseError(IqcAllocError):
    """A problem or report file violates the input format."""
