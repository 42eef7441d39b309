"""Exception hierarchy shared by every module of the package."""


class FracSHEError(Exception):
    """Base class for all package errors."""


class DomainError(FracSHEError, ValueError):
    """An argument lies outside the mathematical domain of the operation."""


class ConfigurationError(FracSHEError, ValueError):
    """Inconsistent or unsupported configuration (grid sizes, caps, kinds)."""


class SingularityError(DomainError):
    """A singular kernel was evaluated at its singular point."""


class NotLocallyIntegrableError(DomainError):
    """A temporal kernel has no locally integrable density (white noise)."""


class DivergentIntegralError(DomainError):
    """The requested integral does not converge."""


class CovarianceNotPSDError(FracSHEError, ArithmeticError):
    """Cholesky factorization failed even after the jitter ladder."""


class QuadratureError(FracSHEError, ArithmeticError):
    """An adaptive quadrature did not reach its tolerance."""


class FitError(FracSHEError, ValueError):
    """A regression or constant fit was refused (bad inputs, non-positive constants)."""


class TruncationError(FracSHEError, ArithmeticError):
    """A series was truncated before its tail dropped below tolerance."""
