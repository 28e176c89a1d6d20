"""
Error hierarchy shared by every module.

Each error carries a ``diagnostics`` dict that the command line serialises to JSON,
so callers can attach whatever numbers explain the failure.
"""


class QbmError(Exception):
    def __init__(self, message: str, **diagnostics):
        super().__init__(message)
        self.diagnostics = diagnostics

    def to_dict(self) -> dict:
        return {
            "error": type(self).__name__,
            "message": str(self),
            "diagnostics": self.diagnostics,
        }


class InvalidInputError(QbmError, ValueError):
    """Raised for invalid parameters, mismatched dimensions or empty grids."""
    pass


class NumericalError(QbmError):
    pass


class DivergentIntegralError(NumericalError):
    pass


class QuadratureError(NumericalError):
    """Adaptive quadrature did not reach its tolerance."""
    pass


class PropagationError(NumericalError):
    pass


class SingularStateError(NumericalError):
    """Singular covariance or singular reduced map."""
    pass


class CoverageError(NumericalError):
    pass
