"""Simulation and moment analysis for the fractional stochastic heat equation on (-1, 1).

The equation is ``du = -(-Delta)^{alpha/2} u dt + xi sigma(u) dF`` with zero
exterior data, a Riesz-correlated Gaussian noise that is white or fBm in
time, and a bounded nonnegative initial datum.
"""

__version__ = "0.1.0"

from .covariance import NoiseSpec, bessel, fbm, fractional, riesz, white_space, white_time
from .exceptions import (
    ConfigurationError,
    CovarianceNotPSDError,
    DivergentIntegralError,
    DomainError,
    FitError,
    FracSHEError,
    NotLocallyIntegrableError,
    QuadratureError,
    SingularityError,
    TruncationError,
)
from .moments import (
    chaos_second_moment_fbm,
    chaos_term_quadrature,
    lyapunov_fit,
    mc_moments,
    picard_lower_series,
    renewal_second_moment,
    rho_fit,
)
from .noise import NoiseStream, build_space_cov, build_spacetime_cov, build_time_cov, uniform_grid
from .solver import SigmaSpec, solve_path, validate_assumptions
from .spectral import SpectralBasis, build_basis, heat_kernel, semigroup_apply

__all__ = [
    "__version__",
    "NoiseSpec",
    "bessel",
    "fbm",
    "fractional",
    "riesz",
    "white_space",
    "white_time",
    "ConfigurationError",
    "CovarianceNotPSDError",
    "DivergentIntegralError",
    "DomainError",
    "FitError",
    "FracSHEError",
    "NotLocallyIntegrableError",
    "QuadratureError",
    "SingularityError",
    "TruncationError",
    "chaos_second_moment_fbm",
    "chaos_term_quadrature",
    "lyapunov_fit",
    "mc_moments",
    "picard_lower_series",
    "renewal_second_moment",
    "rho_fit",
    "NoiseStream",
    "build_space_cov",
    "build_spacetime_cov",
    "build_time_cov",
    "uniform_grid",
    "SigmaSpec",
    "solve_path",
    "validate_assumptions",
    "SpectralBasis",
    "build_basis",
    "heat_kernel",
    "semigroup_apply",
]
