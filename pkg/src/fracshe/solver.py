"""Pathwise exponential-Euler scheme for the mild equation with white-in-time noise.

State is kept as spectral coefficients. One step is

    c_{k+1} = exp(-mu dt) * (c_k + xi * P[sigma(u_k) * dW_k])

with ``u_k`` the grid values of ``c_k``, ``dW_k`` the cell-averaged noise
increment and ``P`` the quadrature projection onto the kept modes. The linear
part is integrated exactly, so with ``xi = 0`` the scheme reproduces the
semigroup. ``sigma`` is evaluated at the left end of each step (Ito).
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .covariance import NoiseSpec, check_pairing, dalang_check
from .exceptions import ConfigurationError, DomainError
from .noise import CovarianceFactor, NoiseGrid, NoiseStream, build_space_cov
from .spectral import SpectralBasis

__all__ = [
    "SigmaSpec",
    "identity",
    "linear",
    "sine_perturbed",
    "FieldSample",
    "AssumptionReport",
    "validate_assumptions",
    "u0_on_grid",
    "solve_path",
    "march",
    "DIVERGENCE_THRESHOLD",
]

DIVERGENCE_THRESHOLD = 1e12


@dataclass(frozen=True)
class SigmaSpec:
    """Multiplicative coefficient with its declared linear-growth constants."""

    kind: str
    lam: float = 1.0

    def __post_init__(self):
        if self.kind == "identity":
            return
        if self.kind == "linear":
            if self.lam == 0:
                raise DomainError("linear sigma needs lambda != 0")
        elif self.kind == "sine-perturbed":
            if not abs(self.lam) < 1:
                raise DomainError(f"sine-perturbed sigma needs |lambda| < 1, got {self.lam}")
        else:
            raise ConfigurationError(f"unknown sigma kind {self.kind!r}")

    @property
    def l_sigma(self) -> float:
        if self.kind == "identity":
            return 1.0
        if self.kind == "linear":
            return abs(self.lam)
        return 1.0 - abs(self.lam)

    @property
    def L_sigma(self) -> float:
        if self.kind == "identity":
            return 1.0
        if self.kind == "linear":
            return abs(self.lam)
        return 1.0 + abs(self.lam)

    def __call__(self, u):
        if self.kind == "identity":
            return u
        if self.kind == "linear":
            return self.lam * u
        return u + self.lam * np.sin(u)


def identity() -> SigmaSpec:
    return SigmaSpec("identity")


def linear(lam: float) -> SigmaSpec:
    return SigmaSpec("linear", float(lam))


def sine_perturbed(lam: float) -> SigmaSpec:
    return SigmaSpec("sine-perturbed", float(lam))


@dataclass(eq=False)
class FieldSample:
    """One trajectory on the time x space grid.

    ``values[k]`` holds the grid values at ``times[k]``. A diverged path keeps
    its values up to the divergence step and NaN afterwards.
    """

    values: np.ndarray
    times: np.ndarray
    seed: int
    replicate: int
    config_hash: str = ""
    diverged: bool = False
    diverged_step: int | None = None


@dataclass
class AssumptionReport:
    ok: bool
    messages: list[str] = field(default_factory=list)
    u0_sup: float = float("nan")
    u0_inf_interior: float = float("nan")
    l_sigma: float = float("nan")
    L_sigma: float = float("nan")


def u0_on_grid(u0, nodes: np.ndarray) -> np.ndarray:
    """Initial datum as grid values; accepts a constant, a callable or an array."""
    if callable(u0):
        return np.asarray(u0(nodes), dtype=float)
    arr = np.asarray(u0, dtype=float)
    if arr.ndim == 0:
        return np.full(nodes.shape, float(arr))
    if arr.shape != nodes.shape:
        raise ConfigurationError(f"u0 has shape {arr.shape}, grid has {nodes.shape}")
    return arr


def validate_assumptions(u0, epsilon: float, sigma: SigmaSpec, nodes: np.ndarray | None = None) -> AssumptionReport:
    """Check boundedness, nonnegativity and interior positivity of ``u0`` and
    the growth bounds of ``sigma``."""
    if nodes is None:
        nodes = -1.0 + (np.arange(256) + 0.5) * (2.0 / 256)
    report = AssumptionReport(ok=True, l_sigma=sigma.l_sigma, L_sigma=sigma.L_sigma)
    if not 0.0 < epsilon < 0.5:
        report.messages.append(f"epsilon must lie in (0, 1/2), got {epsilon}")
    values = u0_on_grid(u0, nodes)
    if not np.all(np.isfinite(values)):
        report.messages.append("u0 is not bounded (non-finite values)")
    else:
        report.u0_sup = float(np.max(np.abs(values)))
        if np.min(values) < 0:
            report.messages.append(f"u0 takes negative values (min {np.min(values):.3g})")
        interior = np.abs(nodes) < 1.0 - epsilon
        if interior.any():
            report.u0_inf_interior = float(np.min(values[interior]))
            if not report.u0_inf_interior > 0:
                report.messages.append(f"inf of u0 over D_eps is {report.u0_inf_interior:.3g}, not positive")
    probe = np.linspace(-50.0, 50.0, 2001)
    s = np.abs(sigma(probe))
    slack = 1e-12 * (1.0 + np.abs(probe))
    if np.any(sigma.l_sigma * np.abs(probe) > s + slack) or np.any(s > sigma.L_sigma * np.abs(probe) + slack):
        report.messages.append(f"sigma violates l|x| <= |sigma(x)| <= L|x| with l={sigma.l_sigma}, L={sigma.L_sigma}")
    report.ok = not report.messages
    return report


def _check_setup(basis: SpectralBasis, noise: NoiseSpec, grid: NoiseGrid) -> None:
    if noise.temporal.kind != "white":
        raise ConfigurationError("pathwise solver needs white-in-time noise")
    check_pairing(noise.spatial, basis.alpha)
    if not dalang_check(noise.spatial, basis.alpha).holds:
        raise DomainError("Dalang condition fails for this kernel and operator")
    if grid.M != basis.M or not np.allclose(grid.nodes, basis.nodes):
        raise ConfigurationError("noise grid and spectral grid differ")


def march(basis: SpectralBasis, xi: float, sigma: Callable, c0: np.ndarray, factor: CovarianceFactor,
          dt: float, K: int, normals: Callable[[int, int], np.ndarray],
          observe: Callable[[int, np.ndarray], None] | None = None, chunk: int = 50):
    """Advance a batch of coefficient vectors ``c0`` of shape ``(B, N)`` by ``K`` steps.

    ``normals(start, count)`` returns standard normals of shape
    ``(B, count, M)`` for steps ``start .. start+count-1``. ``observe(k, c)``
    is called with the coefficients after step ``k`` (and with ``k = 0``
    before the first step). Returns the final coefficients and a boolean mask
    of diverged rows.
    """
    c = np.array(c0, dtype=float, copy=True)
    B = c.shape[0]
    decay = basis.decay(dt)
    phiT = basis.phi.T
    analysis = basis.analysis
    LT = factor.factor.T * np.sqrt(dt)
    diverged = np.zeros(B, dtype=bool)
    if observe is not None:
        observe(0, c)
    for start in range(0, K, chunk):
        count = min(chunk, K - start)
        Z = normals(start, count)
        for j in range(count):
            u = c @ phiT
            bad = ~np.all(np.isfinite(u) & (np.abs(u) <= DIVERGENCE_THRESHOLD), axis=1)
            if bad.any():
                diverged |= bad
                c[bad] = 0.0
                u[bad] = 0.0
            dW = Z[:, j, :] @ LT
            c = (c + xi * ((sigma(u) * dW) @ analysis)) * decay
            if observe is not None:
                observe(start + j + 1, c)
    u = c @ phiT
    diverged |= ~np.all(np.isfinite(u) & (np.abs(u) <= DIVERGENCE_THRESHOLD), axis=1)
    return c, diverged


def solve_path(basis: SpectralBasis, noise: NoiseSpec, sigma: SigmaSpec, u0, grid: NoiseGrid,
               stream: NoiseStream, factor: CovarianceFactor | None = None, config_hash: str = "") -> FieldSample:
    """Simulate one trajectory and return its grid values at every step."""
    _check_setup(basis, noise, grid)
    if factor is None:
        factor = build_space_cov(grid, noise.spatial)
    values = np.full((grid.K + 1, grid.M), np.nan)
    first_bad: list[int] = []

    def observe(k, c):
        u = c[0] @ basis.phi.T
        if first_bad or not np.all(np.isfinite(u) & (np.abs(u) <= DIVERGENCE_THRESHOLD)):
            if not first_bad:
                first_bad.append(k)
            return
        values[k] = u

    c0 = basis.coefficients(u0_on_grid(u0, basis.nodes))[None, :]
    march(basis, noise.xi, sigma, c0, factor, grid.dt, grid.K,
          lambda start, count: stream.normal_block(count, grid.M, start)[None], observe)
    return FieldSample(values, grid.times, stream.seed, stream.replicate, config_hash,
                       diverged=bool(first_bad), diverged_step=first_bad[0] if first_bad else None)
