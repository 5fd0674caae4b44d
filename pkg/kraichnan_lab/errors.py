"""Exceptions for Kraichnan flow lab."""

from __future__ import annotations


class LabError(Exception):
    """Base error for the lab."""


class LabValidationError(LabError):
    """Invalid configuration or input."""

    def __init__(self, message: str, issues: list[tuple[str, str]] | None = None):
        """Initialize validation error.

        Args:
            message: Summary message
            issues: Pairs of (dotted config path, problem)
        """
        super().__init__(message)
        self.issues = issues or []

    def __str__(self) -> str:
        """Render message with the enumerated issues."""
        if not self.issues:
            return super().__str__()
        details = "; ".join(f"{path}: {problem}" for path, problem in self.issues)
        return f"{super().__str__()} ({details})"


class LabResolutionError(LabValidationError):
    """Grid does not resolve a required length scale."""


class LabDomainError(LabValidationError):
    """Argument outside the domain of a function."""


class LabSingularityError(LabValidationError):
    """Integrand is not integrable."""


class LabWindowError(LabValidationError):
    """Shifted window leaves the resolved region."""


class LabBandwidthError(LabValidationError):
    """Local time bandwidth does not resolve the step size."""


class LabBlowUpError(LabError):
    """Numerical blow-up (NaN or Inf) during time stepping."""

    def __init__(self, message: str, time_index: int | None = None):
        """Initialize blow-up error.

        Args:
            message: Error message
            time_index: Step at which the blow-up was detected
        """
        super().__init__(message)
        self.time_index = time_index


class LabClampError(LabBlowUpError):
    """Two-point covariance clamped too many times."""


class LabInstabilityError(LabBlowUpError):
    """Negative mass beyond tolerance."""


class LabDivergenceError(LabBlowUpError):
    """Fixed-point iteration did not converge."""

    def __init__(self, message: str, residual: float):
        """Initialize divergence error.

        Args:
            message: Error message
            residual: Last sup-norm change of the iteration
        """
        super().__init__(message)
        self.residual = residual


class LabPartialFailure(LabError):
    """Some experiment cells failed; completed ones were persisted."""

    def __init__(self, message: str, failed: list[str] | None = None):
        """Initialize partial failure.

        Args:
            message: Error message
            failed: Identifiers of the failed cells
        """
        super().__init__(message)
        self.failed = failed or []


class LabQuadratureError(LabError):
    """Quadrature did not reach its tolerance."""

    def __init__(self, message: str, change: float):
        """Initialize quadrature error.

        Args:
            message: Error message
            change: Last change between the two resolutions
        """
        super().__init__(message)
        self.change = change
