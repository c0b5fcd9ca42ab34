"""Exception and warning types shared across the package."""


class GkpSenseError(Exception):
    """Base class for all package errors."""


class TruncationError(GkpSenseError):
    """A state or operator leaks out of the truncated Fock space."""


class NumericalError(GkpSenseError):
    """A numerical invariant (positivity, Hermiticity, trace) is violated."""


class CompletenessError(NumericalError):
    """Kraus operators fail the POVM completeness relation."""


class ZeroProbability(NumericalError):
    """A measurement outcome has numerically vanishing probability."""


class IntegratorError(NumericalError):
    """The master-equation integrator drifted beyond tolerance."""


class DegenerateDerivative(NumericalError):
    """The derivative of the estimator mean vanishes."""


class InvalidLifetimes(GkpSenseError, ValueError):
    """Lifetimes imply a non-positive pure-dephasing time."""


class ResourceError(GkpSenseError):
    """A requested computation exceeds the configured budget."""


class SupportError(GkpSenseError):
    """Posterior or prior mass falls outside the grid support."""


class Infeasible(GkpSenseError, ValueError):
    """A target value cannot be reached by the requested model."""


class ConvergenceWarning(UserWarning):
    """Iterative preparation did not settle within tolerance."""
