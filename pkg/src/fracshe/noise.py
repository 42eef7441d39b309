"""Gaussian noise on time x space grids.

Increments are cell integrals of the noise divided by the cell width, so the
white-in-time increment on step ``k`` has covariance ``dt * C`` where ``C`` is
the cell-averaged spatial covariance. Singular kernels are never evaluated at
a point; the closed-form cell integrals in :mod:`fracshe.covariance` keep every
matrix entry finite.

Random numbers come from counter-based Philox streams. Replicate ``r`` under
global seed ``s`` owns the key derived from ``SeedSequence(s, spawn_key=(r,))``;
step ``k`` of that replicate reads the counter block starting at
``k * ceil(n / 4)``. A draw is therefore a pure function of
``(seed, replicate, step)``, whichever thread or batch produces it.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np
from scipy.linalg import cholesky
from scipy.special import ndtri

from .covariance import (
    SpatialKernel,
    TemporalKernel,
    fbm_cell_integral,
    riesz_cell_average,
)
from .exceptions import ConfigurationError, CovarianceNotPSDError, DomainError

__all__ = [
    "NoiseGrid",
    "uniform_grid",
    "CovarianceFactor",
    "factorize",
    "build_space_cov",
    "build_time_cov",
    "KroneckerFactor",
    "build_spacetime_cov",
    "NoiseStream",
    "replicate_normals",
    "sample_white_time",
    "sample_spacetime",
    "MAX_JITTER_FRACTION",
    "DEFAULT_SIZE_CAP",
]

MAX_JITTER_FRACTION = 1e-6
DEFAULT_SIZE_CAP = 20000


@dataclass(frozen=True, eq=False)
class NoiseGrid:
    dt: float
    K: int
    nodes: np.ndarray
    widths: np.ndarray

    def __post_init__(self):
        if not self.dt > 0:
            raise DomainError(f"dt must be positive, got {self.dt}")
        if self.K < 1:
            raise ConfigurationError(f"need at least one time step, got K={self.K}")
        if np.any(np.abs(self.nodes) >= 1.0):
            raise DomainError("grid nodes must lie strictly inside (-1, 1)")
        if np.any(self.widths <= 0) or self.widths.sum() > 2.0 + 1e-12:
            raise DomainError("cell widths must be positive with total at most 2")

    @property
    def horizon(self) -> float:
        return self.K * self.dt

    @property
    def M(self) -> int:
        return self.nodes.size

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.K + 1) * self.dt


def uniform_grid(M: int, dt: float, K: int) -> NoiseGrid:
    """Midpoint cells of width ``2/M`` (the spectral quadrature nodes)."""
    h = 2.0 / M
    nodes = -1.0 + (np.arange(M) + 0.5) * h
    return NoiseGrid(float(dt), int(K), nodes, np.full(M, h))


@dataclass(frozen=True, eq=False)
class CovarianceFactor:
    target: str
    matrix: np.ndarray
    factor: np.ndarray
    jitter: float

    @property
    def size(self) -> int:
        return self.matrix.shape[0]

    def reconstruction_error(self) -> float:
        return float(np.max(np.abs(self.factor @ self.factor.T - self.matrix)))


def factorize(matrix: np.ndarray, target: str, max_jitter_fraction: float = MAX_JITTER_FRACTION) -> CovarianceFactor:
    """Lower Cholesky factor, adding the smallest diagonal jitter from a ladder if needed."""
    matrix = np.asarray(matrix, dtype=float)
    scale = float(np.max(np.diag(matrix)))
    ladder = [0.0] + [scale * 10.0 ** e for e in range(-14, 1)]
    for jitter in ladder:
        if jitter > max_jitter_fraction * scale:
            break
        try:
            L = cholesky(matrix + jitter * np.eye(matrix.shape[0]), lower=True, check_finite=True)
        except np.linalg.LinAlgError:
            continue
        return CovarianceFactor(target, matrix, L, jitter)
    raise CovarianceNotPSDError(f"{target}: not positive definite within jitter {max_jitter_fraction:g} x max diagonal")


def _spatial_matrix(grid: NoiseGrid, spatial: SpatialKernel) -> np.ndarray:
    if spatial.kind != "riesz":
        raise ConfigurationError(f"grid covariance is only assembled for riesz kernels, got {spatial.kind!r}")
    if spatial.d != 1:
        raise ConfigurationError("grid covariance is one-dimensional")
    x, w = grid.nodes, grid.widths
    C = riesz_cell_average(spatial.beta, x[:, None], x[None, :], w[:, None], w[None, :])
    return 0.5 * (C + C.T)


def build_space_cov(grid: NoiseGrid, spatial: SpatialKernel) -> CovarianceFactor:
    """Cell-averaged Riesz covariance ``C_jl`` and its Cholesky factor."""
    C = _spatial_matrix(grid, spatial)
    return factorize(C, f"riesz(beta={spatial.beta}) cell-averaged, M={grid.M}")


def build_time_cov(grid: NoiseGrid, temporal: TemporalKernel) -> CovarianceFactor:
    """Covariance of the integrated temporal kernel over the steps ``[t_i, t_{i+1}]``."""
    t = grid.times
    T = fbm_cell_integral(temporal, t[:-1, None], t[1:, None], t[None, :-1], t[None, 1:])
    T = 0.5 * (T + T.T)
    return factorize(T, f"fbm(H={temporal.H}) increments, K={grid.K}")


@dataclass(frozen=True, eq=False)
class KroneckerFactor:
    """Factor of a separable covariance ``kron(time, space)`` kept in block form.

    ``matrix`` and ``factor`` are materialized on first access only; sampling
    uses ``L_T Z L_C^T`` and never forms the full product.
    """

    target: str
    time: CovarianceFactor
    space: CovarianceFactor

    @property
    def size(self) -> int:
        return self.time.size * self.space.size

    @property
    def jitter(self) -> float:
        jt, js = self.time.jitter, self.space.jitter
        return float(jt * np.max(np.diag(self.space.matrix)) + js * np.max(np.diag(self.time.matrix)) + jt * js)

    @cached_property
    def matrix(self) -> np.ndarray:
        return np.kron(self.time.matrix, self.space.matrix)

    @cached_property
    def factor(self) -> np.ndarray:
        return np.kron(self.time.factor, self.space.factor)

    def apply(self, z: np.ndarray) -> np.ndarray:
        """``factor @ z`` for ``z`` of shape ``(..., K, M)``."""
        return self.time.factor @ z @ self.space.factor.T

    def reconstruction_error(self) -> float:
        return max(self.time.reconstruction_error(), self.space.reconstruction_error())


def build_spacetime_cov(grid: NoiseGrid, spatial: SpatialKernel, temporal: TemporalKernel,
                        size_cap: int = DEFAULT_SIZE_CAP) -> KroneckerFactor:
    """Covariance over (step, cell) pairs, ordered step-major.

    The target is the Kronecker product of the integrated temporal block and
    the cell-averaged spatial block, so the Kronecker product of their
    Cholesky factors is its Cholesky factor.
    """
    n = grid.K * grid.M
    if n > size_cap:
        raise ConfigurationError(f"space-time covariance of size {n} exceeds the cap {size_cap}")
    time_f = build_time_cov(grid, temporal)
    space_f = build_space_cov(grid, spatial)
    return KroneckerFactor(f"{time_f.target} (x) {space_f.target}", time_f, space_f)


def _key(seed: int, replicate: int) -> np.ndarray:
    return np.random.SeedSequence(int(seed), spawn_key=(int(replicate),)).generate_state(2, np.uint64)


def _blocks(n: int) -> int:
    return -(-n // 4)


class NoiseStream:
    """Standard normals addressed by ``(seed, replicate, step)``.

    ``normals(step, n)`` is a pure function of its arguments. ``next`` walks
    the steps in order for callers that want an implicit counter.
    """

    def __init__(self, seed: int, replicate: int = 0):
        self.seed = int(seed)
        self.replicate = int(replicate)
        self._key = _key(self.seed, self.replicate)
        self._step = 0

    def _generator(self, start_block: int) -> np.random.Generator:
        return np.random.Generator(np.random.Philox(key=self._key, counter=[start_block, 0, 0, 0]))

    def normals(self, step: int, n: int) -> np.ndarray:
        u = self._generator(step * _blocks(n)).random(_blocks(n) * 4)[:n]
        return ndtri(u + 2.0 ** -54)

    def normal_block(self, K: int, n: int, start_step: int = 0) -> np.ndarray:
        """Steps ``start_step .. start_step+K-1`` at once, shape ``(K, n)``."""
        width = _blocks(n) * 4
        u = self._generator(start_step * _blocks(n)).random(K * width).reshape(K, width)[:, :n]
        return ndtri(u + 2.0 ** -54)

    def next(self, n: int) -> np.ndarray:
        z = self.normals(self._step, n)
        self._step += 1
        return z


def replicate_normals(seed: int, replicates, K: int, n: int) -> np.ndarray:
    """Normals for a batch of replicates, shape ``(len(replicates), K, n)``."""
    return np.stack([NoiseStream(seed, r).normal_block(K, n) for r in replicates])


def sample_white_time(factor: CovarianceFactor, dt: float, stream: NoiseStream, step: int | None = None) -> np.ndarray:
    """One white-in-time spatial increment with covariance ``dt * C``."""
    z = stream.next(factor.size) if step is None else stream.normals(step, factor.size)
    return np.sqrt(dt) * (factor.factor @ z)


def sample_spacetime(factor: KroneckerFactor, stream: NoiseStream) -> np.ndarray:
    """One space-time colored increment field, shape ``(K, M)``.

    Step ``k`` of the underlying standard normals is read from the stream's
    step ``k``, so the draw has the same addressing as white-in-time sampling.
    """
    K, M = factor.time.size, factor.space.size
    return factor.apply(stream.normal_block(K, M))
