"""Dirichlet eigenbasis on the interval (-1, 1) and the killed heat kernel.

The generator is ``-(-Delta)^{alpha/2}`` with zero exterior condition. For
``alpha = 2`` the sine eigenpairs are exact. For ``alpha < 2`` the module uses
the spectral power of the Dirichlet Laplacian: the eigenfunctions are kept and
the eigenvalues become ``((n pi / 2)^2)^{alpha/2}``. That operator is *not* the
generator of the killed stable process; the two-sided envelope checks in this
module are what tie it back to the stable-kernel estimates.

Grid functions live on ``M`` midpoint nodes of a uniform partition of (-1, 1),
with weights equal to the cell width. For sine modes with index below ``M``
this rule is exactly orthonormal (discrete sine transform orthogonality).
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Mapping

import numpy as np
from scipy.special import ndtr

from .exceptions import ConfigurationError, DomainError, FitError

__all__ = [
    "SpectralBasis",
    "build_basis",
    "heat_kernel",
    "heat_kernel_images",
    "semigroup_constant_images",
    "semigroup_apply",
    "chapman_kolmogorov_residual",
    "KernelEnvelope",
    "EnvelopeFit",
    "ENVELOPE_KINDS",
    "envelope_shape",
    "envelope_eval",
    "fit_envelope",
    "near_diagonal_lower_check",
    "interior_mass_lower_check",
    "phi1_comparison_constant",
    "eigenvalue_growth_ratio",
    "witness_constants",
]


@dataclass(frozen=True, eq=False)
class SpectralBasis:
    """Truncated eigenbasis of the Dirichlet operator on (-1, 1).

    Eigenfunctions are not stored: mode ``n`` is ``sin(k_n (x + 1))`` with
    wavenumber ``k_n = mu_n ** (1 / alpha)``, so the eigenvalue list alone
    determines the basis.
    """

    alpha: float
    N: int
    eigenvalues: np.ndarray
    nodes: np.ndarray
    weights: np.ndarray = field(repr=False)

    @property
    def M(self) -> int:
        return self.nodes.size

    @property
    def mu1(self) -> float:
        return float(self.eigenvalues[0])

    @property
    def wavenumbers(self) -> np.ndarray:
        return self.eigenvalues ** (1.0 / self.alpha)

    def eigenfunctions(self, x) -> np.ndarray:
        """Evaluate all modes at ``x``; result has shape ``x.shape + (N,)``."""
        x = np.asarray(x, dtype=float)
        return np.sin(np.multiply.outer(x + 1.0, self.wavenumbers))

    def phi1(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return np.sin(self.wavenumbers[0] * (x + 1.0))

    @cached_property
    def phi(self) -> np.ndarray:
        """Modes on the quadrature nodes, shape ``(M, N)``."""
        return self.eigenfunctions(self.nodes)

    @cached_property
    def analysis(self) -> np.ndarray:
        """``W @ phi``: maps grid values to spectral coefficients by ``f @ analysis``."""
        return self.weights[:, None] * self.phi

    def coefficients(self, f) -> np.ndarray:
        f = np.asarray(f, dtype=float)
        if f.shape[-1] != self.M:
            raise ConfigurationError(f"grid function has {f.shape[-1]} values, basis grid has {self.M}")
        return f @ self.analysis

    def synthesize(self, coeffs, x=None) -> np.ndarray:
        """Grid (or point) values of a mode expansion."""
        coeffs = np.asarray(coeffs, dtype=float)
        if x is None:
            return coeffs @ self.phi.T
        return coeffs @ self.eigenfunctions(x).T

    def decay(self, t: float) -> np.ndarray:
        return np.exp(-self.eigenvalues * t)

    def orthonormality_error(self) -> float:
        gram = self.phi.T @ self.analysis
        return float(np.max(np.abs(gram - np.eye(self.N))))


def build_basis(alpha: float = 2.0, N: int = 64, M: int = 256) -> SpectralBasis:
    """Eigenpairs of the Dirichlet (fractional) Laplacian on (-1, 1).

    Parameters
    ----------
    alpha : float
        Order of the operator, in (0, 2].
    N : int
        Number of modes kept.
    M : int
        Number of quadrature nodes; must be at least ``2 * N``.
    """
    if not (0.0 < alpha <= 2.0):
        raise DomainError(f"alpha must lie in (0, 2], got {alpha}")
    if N < 1:
        raise ConfigurationError(f"N must be >= 1, got {N}")
    if M < 2 * N:
        raise ConfigurationError(f"M={M} < 2N={2 * N}: grid too coarse for the mode count")
    n = np.arange(1, N + 1, dtype=float)
    eigenvalues = ((n * np.pi / 2.0) ** 2) ** (alpha / 2.0)
    h = 2.0 / M
    nodes = -1.0 + (np.arange(M) + 0.5) * h
    weights = np.full(M, h)
    return SpectralBasis(float(alpha), int(N), eigenvalues, nodes, weights)


def heat_kernel(basis: SpectralBasis, t: float, x, y) -> np.ndarray:
    """Truncated spectral series ``sum_n exp(-mu_n t) phi_n(x) phi_n(y)``.

    ``x`` and ``y`` broadcast against each other. The series is evaluated as
    ``exp(-mu t) * (phi(x) * phi(y))`` so swapping ``x`` and ``y`` gives a
    bitwise identical result. Small negative values from truncation are
    returned as is.
    """
    if not t > 0:
        raise DomainError(f"heat kernel needs t > 0, got {t}")
    px = basis.eigenfunctions(x)
    py = basis.eigenfunctions(y)
    return np.sum(basis.decay(t) * (px * py), axis=-1)


def _image_count(t: float) -> int:
    # images beyond 4k > 4 + 12 sqrt(2t) contribute below exp(-72)
    return int(np.ceil((4.0 + 12.0 * np.sqrt(2.0 * t)) / 4.0)) + 1


def heat_kernel_images(t, x, y) -> np.ndarray:
    """Exact Dirichlet heat kernel of ``Delta`` on (-1, 1) by the method of images.

    Only valid for ``alpha = 2``. ``t``, ``x``, ``y`` broadcast together.
    """
    t = np.asarray(t, dtype=float)
    if np.any(t <= 0):
        raise DomainError("heat kernel needs t > 0")
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    K = _image_count(float(np.max(t)))
    norm = 1.0 / np.sqrt(4.0 * np.pi * t)
    direct = x - y
    mirror = x + y + 2.0
    total = np.zeros(np.broadcast(t, x, y).shape)
    for k in range(-K, K + 1):
        shift = 4.0 * k
        total += np.exp(-((direct - shift) ** 2) / (4.0 * t)) - np.exp(-((mirror - shift) ** 2) / (4.0 * t))
    return total * norm


def semigroup_constant_images(t, x, value: float = 1.0) -> np.ndarray:
    """``value * int_D p_D(t, x, y) dy`` for ``alpha = 2``, exact via images.

    At ``t = 0`` returns ``value`` (inside D).
    """
    t = np.asarray(t, dtype=float)
    x = np.asarray(x, dtype=float)
    tt = np.where(t > 0, t, 1.0)
    s = np.sqrt(2.0 * tt)
    K = _image_count(float(np.max(tt)))
    total = np.zeros(np.broadcast(tt, x).shape)
    for k in range(-K, K + 1):
        c = x - 4.0 * k
        total += ndtr((c + 1.0) / s) - ndtr((c - 1.0) / s)
        total -= ndtr((c + 3.0) / s) - ndtr((c + 1.0) / s)
    return value * np.where(t > 0, total, 1.0)


def semigroup_apply(basis: SpectralBasis, t: float, f) -> np.ndarray:
    """Apply the killed semigroup to a grid function (or a stack of them).

    Works by spectral multiplication. ``t = 0`` returns the projection of
    ``f`` onto the first ``N`` modes.
    """
    if t < 0:
        raise DomainError(f"semigroup time must be >= 0, got {t}")
    coeffs = basis.coefficients(f)
    return basis.synthesize(coeffs * basis.decay(t))


def chapman_kolmogorov_residual(basis: SpectralBasis, t: float, s: float, x, y) -> np.ndarray:
    """``|int_D p(t,x,z) p(s,z,y) dz - p(t+s,x,y)|`` by grid quadrature."""
    if not (t > 0 and s > 0):
        raise DomainError("Chapman-Kolmogorov residual needs t, s > 0")
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    z = basis.nodes
    left = heat_kernel(basis, t, x[..., None], z)
    right = heat_kernel(basis, s, z, y[..., None])
    composed = np.sum(left * basis.weights * right, axis=-1)
    return np.abs(composed - heat_kernel(basis, t + s, x, y))


def witness_constants(alpha: float) -> tuple[float, float]:
    """Constants bracketing ``mu_n / n^alpha`` for the sine eigenvalues."""
    base = (np.pi / 2.0) ** alpha
    return base * 2.0 ** (-alpha), base * 2.0 ** alpha


def eigenvalue_growth_ratio(basis: SpectralBasis) -> tuple[float, float]:
    """Min and max of ``mu_n / n^alpha`` over the kept modes."""
    n = np.arange(1, basis.N + 1, dtype=float)
    r = basis.eigenvalues / n ** basis.alpha
    return float(r.min()), float(r.max())


def phi1_comparison_constant(basis: SpectralBasis) -> float:
    """Smallest ``c >= 1`` with ``phi_1 / (1-|x|)^{alpha/2}`` in ``[1/c, c]`` on the grid."""
    x = basis.nodes
    ratio = basis.phi1(x) / (1.0 - np.abs(x)) ** (basis.alpha / 2.0)
    return float(max(ratio.max(), 1.0 / ratio.min(), 1.0))


# ---------------------------------------------------------------------------
# two-sided envelopes

ENVELOPE_KINDS = ("gaussian-exact", "riah-alpha2", "chenkim-stable", "free-stable")


@dataclass(frozen=True)
class KernelEnvelope:
    kind: str
    constants: Mapping[str, float]
    alpha: float
    mu1: float

    def __post_init__(self):
        c = self.constants
        if not c["C_lower"] <= c["C_upper"]:
            raise FitError(f"lower constant {c['C_lower']} exceeds upper {c['C_upper']}")

    def __call__(self, t, x, y, phi1=None):
        return envelope_eval(self.kind, t, x, y, self.constants, alpha=self.alpha, mu1=self.mu1, phi1=phi1)


def _comparison_phi1(alpha: float) -> Callable:
    return lambda x: (1.0 - np.abs(np.asarray(x, dtype=float))) ** (alpha / 2.0)


def _stable_free(t, r, alpha, d=1):
    with np.errstate(divide="ignore"):
        tail = np.where(r > 0, t / np.where(r > 0, r, 1.0) ** (alpha + d), np.inf)
    return np.minimum(t ** (-d / alpha), tail)


def envelope_shape(kind: str, t, x, y, *, alpha: float = 2.0, mu1: float | None = None,
                   rate: float = 0.0, phi1: Callable | None = None) -> np.ndarray:
    """Envelope function without its multiplicative constant.

    ``rate`` is the Gaussian rate ``c`` in ``exp(-c |x-y|^2 / t)`` and only
    enters ``riah-alpha2``. When ``phi1`` is omitted it is replaced by the
    comparison function ``(1 - |x|)^{alpha/2}``.
    """
    t = np.asarray(t, dtype=float)
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if mu1 is None:
        mu1 = (np.pi / 2.0) ** alpha
    if phi1 is None:
        phi1 = _comparison_phi1(alpha)
    r = np.abs(x - y)
    if kind == "gaussian-exact":
        return np.exp(-(r ** 2) / (4.0 * t)) / np.sqrt(4.0 * np.pi * t)
    if kind == "riah-alpha2":
        short = np.minimum(1.0, t)
        return (np.minimum(1.0, phi1(x) * phi1(y) / short) * np.exp(-mu1 * t)
                * np.exp(-rate * r ** 2 / t) / np.minimum(1.0, np.sqrt(t)))
    if kind == "chenkim-stable":
        fx, fy = phi1(x), phi1(y)
        sq = np.sqrt(t)
        small = np.minimum(1.0, fx / sq) * np.minimum(1.0, fy / sq) * _stable_free(t, r, alpha)
        return np.exp(-mu1 * t) * np.where(t < 1.0, small, fx * fy)
    if kind == "free-stable":
        return _stable_free(t, r, alpha)
    raise ConfigurationError(f"unknown envelope kind {kind!r}; expected one of {ENVELOPE_KINDS}")


def envelope_eval(kind: str, t, x, y, constants: Mapping[str, float], *, alpha: float = 2.0,
                  mu1: float | None = None, phi1: Callable | None = None):
    """Return ``(lower, upper)`` of a two-sided envelope.

    ``constants`` holds ``C_lower`` and ``C_upper`` and, for ``riah-alpha2``,
    the Gaussian rates ``rate_lower`` and ``rate_upper``.
    """
    kw = dict(alpha=alpha, mu1=mu1, phi1=phi1)
    lower = constants["C_lower"] * envelope_shape(kind, t, x, y, rate=constants.get("rate_lower", 0.0), **kw)
    upper = constants["C_upper"] * envelope_shape(kind, t, x, y, rate=constants.get("rate_upper", 0.0), **kw)
    return lower, upper


@dataclass
class EnvelopeFit:
    """Outcome of fitting envelope constants on a grid.

    ``violation_fraction`` counts grid points outside the fitted band;
    ``log_spread`` is ``log(C_upper / C_lower)``, the width of the band.
    """

    name: str
    constants: dict
    violation_fraction: float
    n_points: int
    condition: float
    log_spread: float
    ok: bool
    message: str = ""
    envelope: KernelEnvelope | None = None


def _kernel_grid(basis, t_grid, xy_grid):
    t = np.asarray(t_grid, dtype=float)[:, None, None]
    xy = np.asarray(xy_grid, dtype=float)
    x = xy[None, :, None]
    y = xy[None, None, :]
    p = np.stack([heat_kernel(basis, float(ti), x[0], y[0]) for ti in t[:, 0, 0]])
    return np.broadcast_arrays(t, x, y, p)


def fit_envelope(kind: str, basis: SpectralBasis, t_grid, xy_grid, *, use_comparison_phi1: bool = False,
                 rtol: float = 1e-12) -> EnvelopeFit:
    """Fit two-sided constants of an envelope to the spectral kernel.

    A log-scale least-squares fit gives the central constant (and the Gaussian
    rate for ``riah-alpha2``). The lower and upper constants are then the
    central one scaled by the smallest and largest log residual. Points where
    the kernel is not positive cannot be enclosed and are counted as
    violations; a non-positive or non-finite constant marks the fit failed.
    """
    if kind not in ENVELOPE_KINDS:
        raise ConfigurationError(f"unknown envelope kind {kind!r}")
    if np.any(np.asarray(t_grid) <= 0):
        raise DomainError("envelope t-grid must avoid t = 0")
    T, X, Y, P = _kernel_grid(basis, t_grid, xy_grid)
    phi1 = None if use_comparison_phi1 else basis.phi1
    base = envelope_shape(kind, T, X, Y, alpha=basis.alpha, mu1=basis.mu1, rate=0.0, phi1=phi1)
    usable = (P > 0) & (base > 0) & np.isfinite(base)
    target = np.log(P[usable]) - np.log(base[usable])
    if kind == "riah-alpha2":
        design = np.column_stack([np.ones(target.size), -((X - Y)[usable] ** 2) / T[usable]])
    else:
        design = np.ones((target.size, 1))
    coef, *_ = np.linalg.lstsq(design, target, rcond=None)
    resid = target - design @ coef
    C = float(np.exp(coef[0]))
    constants = {"C_lower": C * float(np.exp(resid.min())), "C_upper": C * float(np.exp(resid.max()))}
    if kind == "riah-alpha2":
        constants["rate_lower"] = constants["rate_upper"] = float(coef[1])
    values = np.array(list(constants.values()))
    ok = bool(np.all(np.isfinite(values)) and np.all(values > 0))
    message = "" if ok else "fit produced a non-positive or non-finite constant"
    lower, upper = envelope_eval(kind, T, X, Y, constants, alpha=basis.alpha, mu1=basis.mu1, phi1=phi1)
    bad = (P < lower * (1.0 - rtol)) | (P > upper * (1.0 + rtol)) | ~usable
    envelope = None
    if ok:
        envelope = KernelEnvelope(kind, constants, basis.alpha, basis.mu1)
    return EnvelopeFit(
        name=kind,
        constants=constants,
        violation_fraction=float(bad.mean()),
        n_points=int(bad.size),
        condition=float(np.linalg.cond(design)),
        log_spread=float(np.log(constants["C_upper"] / constants["C_lower"])) if ok else float("inf"),
        ok=ok,
        message=message,
        envelope=envelope,
    )


def _one_sided(name, ratio, n_total):
    """Lower constant from a ratio sample; failure when it is not strictly positive."""
    if ratio.size == 0:
        raise FitError(f"{name}: no admissible grid points")
    c = float(ratio.min())
    ok = bool(np.isfinite(c) and c > 0)
    bad = ratio < c * (1.0 - 1e-12) if ok else np.ones(ratio.size, dtype=bool)
    return EnvelopeFit(
        name=name,
        constants={"c": c, "max_ratio": float(ratio.max())},
        violation_fraction=float(bad.mean()),
        n_points=int(n_total),
        condition=1.0,
        log_spread=float(np.log(ratio.max() / c)) if ok else float("inf"),
        ok=ok,
        message="" if ok else "lower constant is not strictly positive",
    )


def near_diagonal_lower_check(basis: SpectralBasis, t_grid, epsilon: float = 0.25, n_points: int = 21) -> EnvelopeFit:
    """Fit ``c`` in ``p_D(t,x,y) >= c t^{-1/alpha} e^{-mu_1 t}`` for ``x, y`` in
    ``D_eps`` with ``|x - y| < t^{1/alpha}``."""
    pts = np.linspace(-(1.0 - epsilon), 1.0 - epsilon, n_points + 2)[1:-1]
    ratios = []
    for t in np.asarray(t_grid, dtype=float):
        x, y = np.meshgrid(pts, pts, indexing="ij")
        close = np.abs(x - y) < t ** (1.0 / basis.alpha)
        p = heat_kernel(basis, t, x[close], y[close])
        ratios.append(p / (t ** (-1.0 / basis.alpha) * np.exp(-basis.mu1 * t)))
    ratio = np.concatenate(ratios)
    return _one_sided("lwbpD", ratio, ratio.size)


def interior_mass_lower_check(basis: SpectralBasis, t_grid, epsilon: float = 0.25, n_points: int = 21) -> EnvelopeFit:
    """Fit ``c_1`` in ``int_{D_eps} p_D(t,x,y) dy >= c_1 e^{-mu_1 t}`` for ``x`` in ``D_eps``."""
    inner = np.abs(basis.nodes) < 1.0 - epsilon
    pts = np.linspace(-(1.0 - epsilon), 1.0 - epsilon, n_points + 2)[1:-1]
    ratios = []
    for t in np.asarray(t_grid, dtype=float):
        p = heat_kernel(basis, t, pts[:, None], basis.nodes[inner][None, :])
        mass = p @ basis.weights[inner]
        ratios.append(mass / np.exp(-basis.mu1 * t))
    ratio = np.concatenate(ratios)
    return _one_sided("prop31", ratio, ratio.size)
