"""Exception and warning types raised across the package."""


class GwpkError(Exception):
    """Base class for all package errors."""


class DomainMismatchError(GwpkError, ValueError):
    """State carries the wrong domain tag (position vs frequency)."""


class GridMismatchError(GwpkError, ValueError):
    """Two states or a state and a window live on different grids."""


class LatticeError(GwpkError, ValueError):
    """Lattice violates an invariant (oversampling, Nyquist range, coverage)."""


class NormalizationError(GwpkError, ValueError):
    """Window normalization differs from what the synthesis formula needs."""


class FitError(GwpkError, ValueError):
    """Decay fit cannot be formed (too few samples, degenerate geometry)."""


class SymbolError(GwpkError, ValueError):
    """Symbol model unsuitable for the requested operation."""


class FlowBlowUpError(GwpkError, ArithmeticError):
    """Hamiltonian flow left the admissible region.

    ``last_time`` is the last time at which the state was finite and below
    the blow-up threshold.
    """

    def __init__(self, message, last_time):
        super().__init__(message)
        self.last_time = last_time


class ConvergenceError(GwpkError, ArithmeticError):
    """An inner iteration did not converge."""


class BoundaryMassError(GwpkError, ArithmeticError):
    """Evolved state leaked too much mass to the edge of the periodic box."""


class CausticError(GwpkError, ArithmeticError):
    """Position block of the flow Jacobian is (nearly) singular."""


class RootFindingError(GwpkError, ArithmeticError):
    """Inversion of the flow along a frequency slice failed."""


class ClosednessError(GwpkError, ArithmeticError):
    """The 1-form used to build a phase function is not closed."""


class SupportError(GwpkError, ValueError):
    """Phase grid does not cover the essential frequency support of the input."""


class HypothesisError(GwpkError, ValueError):
    """Weight growth is too fast for the fitted sparsity rate."""


class WeightOverflowError(GwpkError, OverflowError):
    """Exponential weight overflows on the requested lattice."""


class ConfigError(GwpkError, ValueError):
    """Scenario configuration failed validation."""


class TruncationWarning(UserWarning):
    """Periodization error may be visible: boundary mass above tolerance."""


class NumericalNoiseWarning(UserWarning):
    """Result is close to the round-off floor of the discretization."""
