"""
Exception hierarchy. ConfigurationError maps to CLI exit code 2, NumericalError to 3.
"""
from typing import Optional, Tuple


class FloquetSnapError(Exception):
    """Base class for every error raised by the toolkit."""


class ConfigurationError(FloquetSnapError, ValueError):
    """Invalid input, configuration or schedule."""


class DimensionError(ConfigurationError):
    """Truncation too small for the requested states."""


class ScheduleError(ConfigurationError):
    """Malformed pulse schedule or evaluation outside its support."""


class InvalidStateError(ConfigurationError):
    """State vector or density matrix violates its invariants."""


class NumericalError(FloquetSnapError, RuntimeError):
    """A computation failed or produced an untrustworthy result."""


class LabelingError(NumericalError):
    """Eigenstate labeling is ambiguous for a required state."""

    def __init__(self, message: str, state: Optional[Tuple[int, int]] = None):
        super().__init__(message)
        self.state = state


class CalibrationError(NumericalError):
    """Pulse calibration cannot be performed or did not converge."""


class BrillouinWindowError(NumericalError):
    """Fourier weight of a matrix element lies outside the Brillouin window."""

    def __init__(self, message: str, window: Tuple[int, int]):
        super().__init__(message)
        self.window = window


class FitQualityError(NumericalError):
    """A nonlinear fit converged to a residual above threshold."""


class SingularityError(NumericalError):
    """An analytic formula is evaluated at its pole."""


class IntegratorError(NumericalError):
    """Time integration lost unitarity, trace or finiteness."""


class ReducibleChainError(NumericalError):
    """Rate matrix has more than one stationary distribution."""
