"""Spatial and temporal noise correlations.

Covers pointwise kernels, the Dalang existence rules for the four spatial
families, and the time aggregates ``kappa(t) = 2 int_0^t gamma`` and
``eta(t) = int_0^{t/3} gamma``. Cell-integrated versions of the singular
kernels (Riesz in space, fBm in time) are exact closed forms built on the
second antiderivative of ``|u|^{-s}``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
from scipy.special import gamma as gamma_fn, kv

from .exceptions import ConfigurationError, DomainError, NotLocallyIntegrableError, SingularityError

__all__ = [
    "DISTRIBUTIONAL",
    "SpatialKernel",
    "TemporalKernel",
    "NoiseSpec",
    "white_space",
    "riesz",
    "bessel",
    "fractional",
    "white_time",
    "fbm",
    "lambda_eval",
    "gamma_eval",
    "DalangResult",
    "dalang_check",
    "check_pairing",
    "kappa",
    "eta",
    "power_double_integral",
    "riesz_cell_average",
    "riesz_point_regularized",
    "fbm_cell_integral",
]


class _Distributional:
    """Marker returned by white kernels: the covariance is a delta, not a function."""

    _instance = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self):
        return "DISTRIBUTIONAL"

    def __bool__(self):
        return False


DISTRIBUTIONAL = _Distributional()


@dataclass(frozen=True)
class SpatialKernel:
    kind: str
    d: int = 1
    beta: float | None = None
    eta: float | None = None
    hurst: tuple[float, ...] = field(default=())

    def __post_init__(self):
        if self.d < 1:
            raise DomainError(f"dimension must be >= 1, got {self.d}")
        if self.kind == "white":
            return
        if self.kind == "riesz":
            if self.beta is None or not (0.0 < self.beta < self.d):
                raise DomainError(f"riesz kernel needs 0 < beta < d={self.d}, got {self.beta}")
        elif self.kind == "bessel":
            if self.eta is None or not self.eta > 0:
                raise DomainError(f"bessel kernel needs eta > 0, got {self.eta}")
        elif self.kind == "fractional":
            if len(self.hurst) != self.d:
                raise DomainError(f"fractional kernel needs {self.d} Hurst indices, got {len(self.hurst)}")
            if not all(0.5 < h < 1.0 for h in self.hurst):
                raise DomainError(f"fractional kernel needs every H in (1/2, 1), got {self.hurst}")
        else:
            raise ConfigurationError(f"unknown spatial kernel kind {self.kind!r}")


@dataclass(frozen=True)
class TemporalKernel:
    kind: str
    H: float | None = None

    def __post_init__(self):
        if self.kind == "white":
            return
        if self.kind != "fbm":
            raise ConfigurationError(f"unknown temporal kernel kind {self.kind!r}")
        if self.H is None or not (0.5 < self.H < 1.0):
            raise DomainError(f"fbm temporal kernel needs H in (1/2, 1), got {self.H}")

    @property
    def C_H(self) -> float:
        if self.kind != "fbm":
            raise NotLocallyIntegrableError("white temporal kernel has no density constant")
        return self.H * (2.0 * self.H - 1.0)


@dataclass(frozen=True)
class NoiseSpec:
    xi: float
    spatial: SpatialKernel
    temporal: TemporalKernel

    def __post_init__(self):
        if not self.xi >= 0:
            raise DomainError(f"noise level must be >= 0, got {self.xi}")


def white_space(d: int = 1) -> SpatialKernel:
    return SpatialKernel("white", d=d)


def riesz(beta: float, d: int = 1) -> SpatialKernel:
    return SpatialKernel("riesz", d=d, beta=float(beta))


def bessel(eta: float, d: int = 1) -> SpatialKernel:
    return SpatialKernel("bessel", d=d, eta=float(eta))


def fractional(*hurst: float) -> SpatialKernel:
    return SpatialKernel("fractional", d=len(hurst), hurst=tuple(float(h) for h in hurst))


def white_time() -> TemporalKernel:
    return TemporalKernel("white")


def fbm(H: float) -> TemporalKernel:
    return TemporalKernel("fbm", H=float(H))


def lambda_eval(spatial: SpatialKernel, r):
    """Pointwise spatial covariance.

    ``r`` is a separation distance, or for the fractional kernel with ``d > 1``
    an array whose last axis holds the coordinate separations. White noise
    returns ``DISTRIBUTIONAL``.
    """
    if spatial.kind == "white":
        return DISTRIBUTIONAL
    r = np.asarray(r, dtype=float)
    if spatial.kind == "fractional" and spatial.d > 1:
        comps = np.abs(r)
        if np.any(comps == 0):
            raise SingularityError("fractional kernel is singular when a coordinate separation is 0")
        return np.prod(comps ** (2.0 * np.asarray(spatial.hurst) - 2.0), axis=-1)
    dist = np.abs(r)
    if spatial.kind in ("riesz", "fractional") and np.any(dist == 0):
        raise SingularityError(f"{spatial.kind} kernel is singular at r = 0; use a cell-averaged covariance")
    if spatial.kind == "riesz":
        return dist ** (-spatial.beta)
    if spatial.kind == "fractional":
        return dist ** (2.0 * spatial.hurst[0] - 2.0)
    # bessel: int_0^inf y^{(eta-d)/2} e^{-y} e^{-r^2/(4y)} dy = 2 (r/2)^nu K_nu(r)
    nu = (spatial.eta - spatial.d) / 2.0 + 1.0
    if np.any(dist == 0) and nu <= 0:
        raise SingularityError(f"bessel kernel with eta={spatial.eta} <= d-2 is singular at r = 0")
    with np.errstate(invalid="ignore"):
        val = 2.0 * (dist / 2.0) ** nu * kv(nu, dist)
    return np.where(dist == 0, gamma_fn(nu) if nu > 0 else np.inf, val)


def gamma_eval(temporal: TemporalKernel, r):
    """Temporal covariance ``C_H |r|^{2H-2}``; white noise returns ``DISTRIBUTIONAL``."""
    if temporal.kind == "white":
        return DISTRIBUTIONAL
    r = np.abs(np.asarray(r, dtype=float))
    if np.any(r == 0):
        raise SingularityError("fbm temporal kernel is singular at r = 0")
    return temporal.C_H * r ** (2.0 * temporal.H - 2.0)


class DalangResult(NamedTuple):
    holds: bool
    rule: str


def dalang_check(spatial: SpatialKernel, alpha: float, d: int | None = None) -> DalangResult:
    """Closed-form Dalang condition for each spatial family."""
    d = spatial.d if d is None else d
    if spatial.kind == "white":
        return DalangResult(alpha > d, f"white: alpha > d ({alpha} > {d})")
    if spatial.kind == "riesz":
        return DalangResult(spatial.beta < alpha, f"riesz: beta < alpha ({spatial.beta} < {alpha})")
    if spatial.kind == "bessel":
        return DalangResult(spatial.eta > d - alpha, f"bessel: eta > d - alpha ({spatial.eta} > {d - alpha})")
    total = sum(spatial.hurst)
    return DalangResult(total > d - alpha / 2.0, f"fractional: sum H > d - alpha/2 ({total} > {d - alpha / 2.0})")


def check_pairing(spatial: SpatialKernel, alpha: float) -> None:
    """Raise unless a Riesz kernel satisfies ``0 < beta < alpha ^ d``."""
    if spatial.kind != "riesz":
        raise ConfigurationError(f"simulation requires a riesz spatial kernel, got {spatial.kind!r}")
    if not spatial.beta < min(alpha, spatial.d):
        raise DomainError(f"beta={spatial.beta} must be below min(alpha, d)={min(alpha, spatial.d)}")


def _require_integrable(temporal: TemporalKernel) -> None:
    if temporal.kind != "fbm":
        raise NotLocallyIntegrableError("white-in-time noise (gamma = delta_0) has no local integral")


def kappa(temporal: TemporalKernel, t):
    """``2 int_0^t gamma(r) dr = 2 C_H t^{2H-1} / (2H-1)``."""
    _require_integrable(temporal)
    t = np.asarray(t, dtype=float)
    e = 2.0 * temporal.H - 1.0
    return 2.0 * temporal.C_H * t ** e / e


def eta(temporal: TemporalKernel, t):
    """``int_0^{t/3} gamma(r) dr = C_H (t/3)^{2H-1} / (2H-1)``."""
    _require_integrable(temporal)
    t = np.asarray(t, dtype=float)
    e = 2.0 * temporal.H - 1.0
    return temporal.C_H * (t / 3.0) ** e / e


# ---------------------------------------------------------------------------
# cell integrals of |u|^{-s}


def _second_antiderivative(u, s):
    return np.abs(u) ** (2.0 - s) / ((1.0 - s) * (2.0 - s))


def power_double_integral(s: float, a0, a1, b0, b1):
    """``int_{a0}^{a1} int_{b0}^{b1} |y - z|^{-s} dz dy`` for ``s < 1``."""
    if not s < 1.0:
        raise DomainError(f"|u|^-s is not integrable on squares for s={s} >= 1")
    F = _second_antiderivative
    return F(a1 - b0, s) - F(a1 - b1, s) - F(a0 - b0, s) + F(a0 - b1, s)


def riesz_cell_average(beta: float, left, right, widths_left, widths_right):
    """Average of ``|y - z|^{-beta}`` over cell pairs centred at ``left`` and ``right``."""
    left = np.asarray(left, dtype=float)
    right = np.asarray(right, dtype=float)
    wl = np.asarray(widths_left, dtype=float)
    wr = np.asarray(widths_right, dtype=float)
    total = power_double_integral(beta, left - wl / 2, left + wl / 2, right - wr / 2, right + wr / 2)
    return total / (wl * wr)


def riesz_point_regularized(beta: float, r, h: float):
    """Riesz kernel averaged over two width-``h`` cells whose centres are ``r`` apart.

    Depends only on ``|r|``; finite at ``r = 0`` where it equals
    ``2 h^{-beta} / ((1-beta)(2-beta))``.
    """
    r = np.asarray(r, dtype=float)
    F = _second_antiderivative
    return (F(r + h, beta) - 2.0 * F(r, beta) + F(r - h, beta)) / h ** 2


def fbm_cell_integral(temporal: TemporalKernel, a0, a1, b0, b1):
    """``int_{a0}^{a1} int_{b0}^{b1} C_H |r - s|^{2H-2} ds dr`` (fBm increment covariance)."""
    _require_integrable(temporal)
    return temporal.C_H * power_double_integral(2.0 - 2.0 * temporal.H, a0, a1, b0, b1)
