"""Exception types raised across the solver."""


class SolverError(Exception):
    """Base class for all solver-specific failures."""


# -- diffusion ---------------------------------------------------------------

class NonPositiveVolatility(SolverError):
    pass


class DiscountBelowFloor(SolverError):
    pass


class IntegrabilityProbeDiverged(SolverError):
    pass


class OdeIntegrationFailed(SolverError):
    pass


class NoDecayingSolutionFound(SolverError):
    pass


class OutOfInterval(SolverError):
    pass


# -- payoff ------------------------------------------------------------------

class StaircaseModeRequired(SolverError):
    """The operator measure does not exist because the payoff jumps in value."""


class QuadratureFailure(SolverError):
    pass


class IdentityMismatch(SolverError):
    """Direct and integral slope functionals disagree beyond tolerance."""


class IntegrabilityFailure(SolverError):
    pass


class WellPosednessError(SolverError):
    """Problem rejected by the integrability or growth-limit gates."""


# -- classifier --------------------------------------------------------------

class MoreThanTwoSignChanges(SolverError):
    """Sign structure outside the six supported cases."""


class MultipleCrossings(SolverError):
    pass


class Unclassifiable(SolverError):
    pass


# -- boundary solver ---------------------------------------------------------

class NonpositiveB(SolverError):
    pass


class OrderViolation(SolverError):
    pass


class NoRoot(SolverError):
    pass


class AtomStraddle(SolverError):
    """A root landed on an atom; only the subgradient interval is defined."""

    def __init__(self, message, location=None, bracket=None):
        super().__init__(message)
        self.location = location
        self.bracket = bracket


class NoCrossing(SolverError):
    """The two boundary maps never intersect on the admissible range."""


class NegativeCoefficient(SolverError):
    pass


class SingularFitSystem(SolverError):
    pass


class UnsupportedStaircase(SolverError):
    """Staircase payoff outside the supported shape (upward steps, base <= 0)."""


# -- value function ----------------------------------------------------------

class ContinuityViolation(SolverError):
    pass


# -- verifier ----------------------------------------------------------------

class UnstableScheme(SolverError):
    pass


class NoConvergence(SolverError):
    pass


# -- cli ---------------------------------------------------------------------

class ParseError(SolverError):
    pass
