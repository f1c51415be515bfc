"""Exception types shared across the package."""


class LaguerreFlowError(Exception):
    """Base class for all package-specific errors."""


class InvalidDomain(LaguerreFlowError):
    """Domain polygon is not a simple closed polygon."""


class CoincidentParticles(LaguerreFlowError):
    """Two particle positions coincide (up to tolerance)."""


class NonpositiveWeight(LaguerreFlowError):
    """A nonempty clipped cell reported a nonpositive weight."""


class NegativeDensity(LaguerreFlowError):
    """Density argument below zero."""


class NonpositiveDensity(LaguerreFlowError):
    """Reference density negative on a cell."""


class DomainError(LaguerreFlowError):
    """Argument outside the domain of a conjugate/kernel function."""


class ConjugateDomain(LaguerreFlowError):
    """Weight vector outside the effective domain of the dual functional."""


class NewtonFailure(LaguerreFlowError):
    """Weight solve did not converge within the iteration budget."""

    def __init__(self, message, residual=None, iterations=None):
        super().__init__(message)
        self.residual = residual
        self.iterations = iterations


class StaleState(LaguerreFlowError):
    """Solver state does not match the particle system it is used with."""


class UnsupportedPotential(LaguerreFlowError):
    """Closed-form step requested for a potential without one."""


class DissipationViolation(LaguerreFlowError):
    """Energy increased along a discrete trajectory (solver/geometry bug)."""


class LengthMismatch(LaguerreFlowError):
    """Paired sequences have different lengths."""


class QuadratureFailure(LaguerreFlowError):
    """Root-finding or quadrature inside an integral transform failed."""
