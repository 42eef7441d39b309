"""Closed-form moment bounds and the auxiliary identities behind them.

Every evaluator works in log space (``gammaln``, ``logsumexp``) so that
exponents of several hundred stay representable. Existential constants are
inputs; where a check needs them it fits them on a grid and reports how many
grid points the fitted bound fails to cover.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np
from scipy.integrate import quad
from scipy.optimize import brentq
from scipy.special import expit, gammaln, logsumexp

from .covariance import TemporalKernel, eta as eta_fn, kappa as kappa_fn, riesz
from .exceptions import ConfigurationError, DivergentIntegralError, DomainError, QuadratureError, TruncationError
from .noise import build_space_cov, uniform_grid
from .spectral import SpectralBasis, heat_kernel

__all__ = [
    "BoundParams",
    "BoundCurve",
    "thm1_curve",
    "thm2_curve",
    "cor3_curve",
    "rho_exponent",
    "growth_threshold",
    "threshold_by_root",
    "simplex_integral",
    "simplex_integral_quadrature",
    "select_gamma_power",
    "ml_series",
    "SeriesBoundsFit",
    "ml_bounds_check",
    "stirling_ratio",
    "stirling_lambda",
    "GronwallBound",
    "gronwall_curve",
    "timsc_check",
    "TimScReport",
    "KernelIntegralReport",
    "kernel_integral_check_lm2",
    "kernel_integral_check_prop32",
    "kernel_integral_lower_check",
]


@dataclass(frozen=True)
class BoundParams:
    alpha: float
    beta: float
    mu1: float
    xi: float
    p: float = 2.0
    d: int = 1
    delta: float = 0.1
    z_p: float | None = None
    l_sigma: float = 1.0
    L_sigma: float = 1.0
    H: float | None = None
    c1: float = 1.0
    c2: float = 1.0
    C1: float = 1.0
    C2: float = 1.0

    def __post_init__(self):
        if not 0 < self.beta < min(self.alpha, self.d):
            raise DomainError(f"need 0 < beta < min(alpha, d), got beta={self.beta}")
        if not 0 < self.delta < 1:
            raise DomainError(f"delta must lie in (0, 1), got {self.delta}")
        if self.p < 2:
            raise DomainError(f"moment order must be >= 2, got {self.p}")
        if self.xi < 0:
            raise DomainError("noise level must be >= 0")
        if min(self.c1, self.c2, self.C1, self.C2, self.l_sigma, self.L_sigma) <= 0:
            raise DomainError("all constants must be positive")
        if self.H is not None and not 0.5 < self.H < 1:
            raise DomainError(f"H must lie in (1/2, 1), got {self.H}")

    @property
    def zp(self) -> float:
        """Moment-inequality constant; ``2 sqrt(p)`` unless supplied."""
        return 2.0 * math.sqrt(self.p) if self.z_p is None else self.z_p

    @property
    def xi_exponent(self) -> float:
        return 2.0 * self.alpha / (self.alpha - self.beta)


@dataclass(frozen=True)
class BoundCurve:
    """Lower and upper bounds as functions of ``t``, stored as logs."""

    name: str
    log_lower: Callable
    log_upper: Callable
    params: BoundParams

    def lower(self, t):
        return np.exp(self.log_lower(np.asarray(t, dtype=float)))

    def upper(self, t):
        return np.exp(self.log_upper(np.asarray(t, dtype=float)))

    def table(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        return np.column_stack([t, self.lower(t), self.upper(t)])


def thm1_curve(params: BoundParams) -> BoundCurve:
    """White-in-time bounds ``c1^p e^{p t (c2 xi^e - mu1)}`` and
    ``C1^p e^{p t (C2 xi^e z_p^e - (1-delta) mu1)}`` with ``e = 2 alpha/(alpha-beta)``."""
    P = params
    e = P.xi_exponent
    low_rate = P.c2 * P.xi ** e - P.mu1
    up_rate = P.C2 * P.xi ** e * P.zp ** e - (1.0 - P.delta) * P.mu1
    return BoundCurve(
        "thm1",
        lambda t: P.p * math.log(P.c1) + P.p * t * low_rate,
        lambda t: P.p * math.log(P.C1) + P.p * t * up_rate,
        P,
    )


def thm2_curve(params: BoundParams, temporal: TemporalKernel | None = None) -> BoundCurve:
    """Time-colored bounds driven by ``eta(t)`` (lower) and ``kappa(t)`` (upper)."""
    P = params
    if temporal is None:
        if P.H is None:
            raise ConfigurationError("thm2_curve needs a temporal kernel or params.H")
        temporal = TemporalKernel("fbm", P.H)
    e = P.xi_exponent
    q = P.alpha / (P.alpha - P.beta)

    def log_lower(t):
        return P.p * math.log(P.c1) + P.p * t * (P.c2 * eta_fn(temporal, t) ** q * P.xi ** e - P.mu1)

    def log_upper(t):
        growth = P.C2 * (P.p - 1.0) ** q * kappa_fn(temporal, t) ** q * P.xi ** e
        return P.p * math.log(P.C1) + P.p * t * (growth - (1.0 - P.delta) * P.mu1)

    return BoundCurve("thm2", log_lower, log_upper, P)


def cor3_curve(params: BoundParams) -> BoundCurve:
    """fBm-in-time bounds, affine in ``t^rho`` up to the ``mu1 t`` term.

    The upper exponent carries ``(mu1 - delta) t`` as displayed in the source
    result (not ``(1 - delta) mu1 t`` as in the other two theorems).
    """
    P = params
    if P.H is None:
        raise ConfigurationError("cor3_curve needs params.H")
    rho = rho_exponent(P.alpha, P.beta, P.H)
    e = P.xi_exponent
    q = P.alpha / (P.alpha - P.beta)

    def log_lower(t):
        return P.p * math.log(P.c1) + P.c2 * P.p * (t ** rho * P.xi ** e - P.mu1 * t)

    def log_upper(t):
        return P.p * math.log(P.C1) + P.C2 * P.p * ((P.p - 1.0) ** q * t ** rho * P.xi ** e - (P.mu1 - P.delta) * t)

    return BoundCurve("cor3", log_lower, log_upper, P)


def rho_exponent(alpha: float, beta: float, H: float) -> float:
    """``(2 H alpha - beta) / (alpha - beta)``."""
    if not 0.5 < H < 1:
        raise DomainError(f"H must lie in (1/2, 1), got {H}")
    if not 0 <= beta < alpha:
        raise DomainError("need 0 <= beta < alpha")
    return (2.0 * H * alpha - beta) / (alpha - beta)


def growth_threshold(mu1: float, c2: float, alpha: float, beta: float) -> float:
    """Noise level where the lower bound's growth rate changes sign: ``(mu1/c2)^{(alpha-beta)/(2 alpha)}``."""
    return (mu1 / c2) ** ((alpha - beta) / (2.0 * alpha))


def threshold_by_root(params: BoundParams) -> float:
    """Same threshold found by bracketing the sign change of the lower rate."""
    e = params.xi_exponent

    def rate(xi):
        return params.c2 * xi ** e - params.mu1

    hi = 1.0
    while rate(hi) <= 0:
        hi *= 2.0
    return brentq(rate, 0.0, hi, xtol=1e-15, rtol=4 * np.finfo(float).eps)


# ---------------------------------------------------------------------------
# simplex integrals


def _check_simplex(n, zeta, a, b):
    if n < 1:
        raise DomainError("need n >= 1")
    if zeta <= -1:
        raise DivergentIntegralError(f"simplex integral diverges for zeta={zeta} <= -1")
    if not 0 <= a < b:
        raise DomainError("need 0 <= a < b")


def simplex_integral(n: int, zeta: float, a: float, b: float, *, log: bool = False, gamma_power: str = "n") -> float:
    """``int_{a<r_1<...<r_n<b} prod (r_{i+1} - r_i)^zeta dr`` with ``r_{n+1} = b``.

    Equals ``Gamma(1+zeta)^n (b-a)^{n(1+zeta)} / Gamma(n(1+zeta)+1)``.
    ``gamma_power="n+1"`` evaluates the variant with one extra Gamma factor,
    for comparison against the quadrature oracle.
    """
    _check_simplex(n, zeta, a, b)
    power = {"n": n, "n+1": n + 1}[gamma_power]
    out = power * gammaln(1.0 + zeta) + n * (1.0 + zeta) * math.log(b - a) - gammaln(n * (1.0 + zeta) + 1.0)
    return float(out) if log else float(math.exp(out))


def _tanh_sinh(h: float, tmax: float = 4.0):
    """Nodes ``u`` in (0, 1), the accurate complements ``1 - u`` and weights."""
    tau = np.arange(-math.ceil(tmax / h), math.ceil(tmax / h) + 1) * h
    s = 0.5 * math.pi * np.sinh(tau)
    u = expit(2.0 * s)
    one_minus = expit(-2.0 * s)
    w = h * 0.5 * math.pi * np.cosh(tau) * 2.0 * u * one_minus
    keep = (u > 0) & (one_minus > 0) & (w > 0)
    return u[keep], one_minus[keep], w[keep]


def simplex_integral_quadrature(n: int, zeta: float, a: float, b: float, *, rtol: float = 1e-13,
                                max_halvings: int = 7) -> float:
    """Nested double-exponential quadrature for the simplex integral (``n <= 3``).

    Level ``k`` substitutes ``r_k = a + L_k u_k`` with ``L_n = b - a`` and
    ``L_{k-1} = L_k u_k``, so each factor becomes ``[L_k (1 - u_k)]^zeta L_k``
    on the unit interval, with the endpoint singularity handled by the
    tanh-sinh rule. The step is halved until two estimates agree to ``rtol``.
    """
    _check_simplex(n, zeta, a, b)
    if n > 3:
        raise ConfigurationError("quadrature oracle is limited to n <= 3")

    def estimate(h):
        u, om, w = _tanh_sinh(h)
        L = np.array([b - a])
        acc = np.ones(1)
        for _ in range(n):
            L = L[..., None]
            acc = acc[..., None] * (L * om) ** zeta * L * w
            L = L * u
        return float(acc.sum())

    h = 0.5
    prev = estimate(h)
    for _ in range(max_halvings):
        h /= 2.0
        cur = estimate(h)
        if abs(cur - prev) <= rtol * abs(cur):
            return cur
        prev = cur
    raise QuadratureError(f"simplex quadrature did not converge (n={n}, zeta={zeta})")


def select_gamma_power(n: int, zeta: float, a: float, b: float) -> str:
    """Which Gamma power (``"n"`` or ``"n+1"``) the quadrature oracle agrees with.

    Returns ``"either"`` when both candidates coincide (``zeta = 0``).
    """
    oracle = simplex_integral_quadrature(n, zeta, a, b)
    err = {g: abs(simplex_integral(n, zeta, a, b, gamma_power=g) - oracle) / abs(oracle) for g in ("n", "n+1")}
    if abs(err["n"] - err["n+1"]) < 1e-10:
        return "either"
    return min(err, key=err.get)


# ---------------------------------------------------------------------------
# Mittag-Leffler type series and Stirling ratios


def ml_series(x: float, nu: float, from_k: int = 0, terms: int | None = None, *, log: bool = False,
              rtol: float = 1e-12) -> float:
    """``sum_{k >= from_k} x^k / (k!)^nu`` summed in log space.

    With ``terms=None`` the sum runs until the geometric tail bound drops
    below ``rtol`` of the total. With an explicit ``terms`` count a tail that
    is still too large raises :class:`TruncationError`.
    """
    if not x > 0 or not nu > 0:
        raise DomainError("need x > 0 and nu > 0")
    lx = math.log(x)

    def tail_ok(k_last, lt_last, total):
        log_ratio = lx - nu * math.log(k_last + 1.0)
        if log_ratio >= math.log(0.5):
            return False
        return lt_last + log_ratio - math.log1p(-math.exp(log_ratio)) < total + math.log(rtol)

    if terms is not None:
        k = np.arange(from_k, from_k + terms, dtype=float)
        lt = k * lx - nu * gammaln(k + 1.0)
        total = float(logsumexp(lt))
        if not tail_ok(k[-1], lt[-1], total):
            raise TruncationError(f"{terms} terms leave a tail above {rtol:g}; increase terms")
    else:
        parts, start, chunk = [], from_k, 512
        while True:
            k = np.arange(start, start + chunk, dtype=float)
            lt = k * lx - nu * gammaln(k + 1.0)
            parts.append(logsumexp(lt))
            total = float(logsumexp(parts))
            if tail_ok(k[-1], lt[-1], total):
                break
            start += chunk
    return total if log else math.exp(total)


@dataclass
class SeriesBoundsFit:
    """Fitted sandwich ``c1p e^{c2 x^{1/nu}} <= S(x) <= C1 e^{c1 x^{1/nu}}``."""

    nu: float
    from_k: int
    c1: float
    c2: float
    C1: float
    c1p: float
    violations: int
    n_points: int


def ml_bounds_check(x_grid, nu: float, from_k: int = 0, rtol: float = 1e-12) -> SeriesBoundsFit:
    """Fit both exponential envelopes of the series on ``x_grid``.

    Least squares of ``log S`` against ``x^{1/nu}`` gives a common rate; the
    prefactors are then moved by the extreme residuals so the band encloses
    every grid point.
    """
    x = np.asarray(x_grid, dtype=float)
    logS = np.array([ml_series(v, nu, from_k, log=True) for v in x])
    z = x ** (1.0 / nu)
    design = np.column_stack([np.ones_like(z), z])
    coef, *_ = np.linalg.lstsq(design, logS, rcond=None)
    resid = logS - design @ coef
    rate = float(coef[1])
    log_up = coef[0] + resid.max()
    log_lo = coef[0] + resid.min()
    upper = log_up + rate * z
    lower = log_lo + rate * z
    slack = rtol * np.maximum(1.0, np.abs(logS))
    bad = (logS > upper + slack) | (logS < lower - slack)
    return SeriesBoundsFit(nu, from_k, rate, rate, float(math.exp(log_up)), float(math.exp(log_lo)),
                           int(bad.sum()), int(x.size))


def stirling_ratio(n, tau: float):
    """``Gamma(n tau + 1) / (n!)^tau`` through log-Gamma."""
    n = np.asarray(n, dtype=float)
    if np.any(n < 1) or not tau > 0:
        raise DomainError("need n >= 1 and tau > 0")
    out = np.exp(gammaln(n * tau + 1.0) - tau * gammaln(n + 1.0))
    return float(out) if out.ndim == 0 else out


def stirling_lambda(tau: float, n_max: int = 200) -> float:
    """Smallest ``lambda`` with ``lambda^{-n} <= ratio_n <= lambda^n`` for ``n <= n_max``."""
    n = np.arange(1, n_max + 1, dtype=float)
    lr = gammaln(n * tau + 1.0) - tau * gammaln(n + 1.0)
    return float(math.exp(np.max(np.abs(lr) / n)))


# ---------------------------------------------------------------------------
# Gronwall-type bound


@dataclass(frozen=True)
class GronwallBound:
    """``c2 exp(c3 (Gamma(rho) kappa)^{1/rho} t)``."""

    c1: float
    kappa: float
    rho: float
    c2: float = 1.0
    c3: float = 1.0
    violations: int | None = None

    @property
    def rate(self) -> float:
        if self.kappa == 0:
            return 0.0
        return self.c3 * math.exp((gammaln(self.rho) + math.log(self.kappa)) / self.rho)

    def __call__(self, t):
        return self.c2 * np.exp(self.rate * np.asarray(t, dtype=float))

    def log(self, t):
        return math.log(self.c2) + self.rate * np.asarray(t, dtype=float)

    def verify_on(self, t, f, *, log: bool = False, rtol: float = 1e-12) -> "GronwallBound":
        """Fit ``c2, c3`` so the bound dominates the samples ``f(t)``.

        ``c3`` comes from the least-squares slope of ``log f`` (floored at 0)
        and ``c2`` from the largest remaining residual. The returned bound
        carries the number of samples it fails to dominate.
        """
        t = np.asarray(t, dtype=float)
        lf = np.asarray(f, dtype=float) if log else np.log(np.asarray(f, dtype=float))
        base = 1.0 if self.kappa == 0 else math.exp((gammaln(self.rho) + math.log(self.kappa)) / self.rho)
        slope = np.polyfit(base * t, lf, 1)[0] if t.size > 1 else 0.0
        c3 = max(float(slope), 0.0)
        log_c2 = float(np.max(lf - c3 * base * t))
        fitted = replace(self, c2=math.exp(log_c2), c3=c3)
        bad = lf > fitted.log(t) + rtol * np.maximum(1.0, np.abs(lf))
        return replace(fitted, violations=int(bad.sum()))


def gronwall_curve(c1: float, kappa_const: float, rho: float, c2: float = 1.0, c3: float = 1.0) -> GronwallBound:
    if not rho > 0:
        raise DomainError(f"rho must be positive, got {rho}")
    if kappa_const < 0 or c1 <= 0:
        raise DomainError("need kappa >= 0 and c1 > 0")
    return GronwallBound(float(c1), float(kappa_const), float(rho), float(c2), float(c3))


# ---------------------------------------------------------------------------
# time-scaling integral


@dataclass
class TimScReport:
    values: np.ndarray
    t_grid: np.ndarray
    w_grid: np.ndarray
    sup: float
    sup_per_t: np.ndarray
    spread: float


def _timsc_integral(t, w, alpha, beta, split=1.0):
    f = lambda v: math.exp(-t * abs(v) ** alpha)
    opts = dict(epsabs=0.0, epsrel=1e-11, limit=200)
    left, e1 = quad(f, w - split, w, weight="alg", wvar=(0.0, beta - 1.0), **opts)
    right, e2 = quad(f, w, w + split, weight="alg", wvar=(beta - 1.0, 0.0), **opts)
    g = lambda v: math.exp(-t * abs(v) ** alpha) * abs(w - v) ** (beta - 1.0)
    far_l, e3 = quad(g, -np.inf, w - split, **opts)
    far_r, e4 = quad(g, w + split, np.inf, **opts)
    total = left + right + far_l + far_r
    err = e1 + e2 + e3 + e4
    if not np.isfinite(total) or err > 1e-7 * abs(total):
        raise QuadratureError(f"time-scaling integral did not converge at t={t}, w={w}")
    return total


def timsc_check(alpha: float, beta: float, t_grid, w_grid) -> TimScReport:
    """Sup over the grids of ``t^{beta/alpha} int e^{-t|v|^alpha} |w - v|^{beta-1} dv`` (d = 1).

    The integral is split at ``v = w`` where the algebraic weight is used.
    """
    if not 0 < beta < 1:
        raise DomainError("need 0 < beta < 1 in one dimension")
    t = np.asarray(t_grid, dtype=float)
    w = np.asarray(w_grid, dtype=float)
    vals = np.array([[ti ** (beta / alpha) * _timsc_integral(ti, wi, alpha, beta) for wi in w] for ti in t])
    per_t = vals.max(axis=1)
    return TimScReport(vals, t, w, float(vals.max()), per_t, float(per_t.max() / per_t.min() - 1.0))


# ---------------------------------------------------------------------------
# kernel integrals against the spatial covariance


@dataclass
class KernelIntegralReport:
    name: str
    constant: float
    violations: int
    n_points: int
    values: np.ndarray = field(repr=False)
    ratios: np.ndarray = field(repr=False)


def _kernel_bilinear(basis, beta, t, x, s, w, cov, mask=None):
    """``int int p(t,x,y) p(s,w,z) Lambda(y-z) dy dz`` on the basis grid."""
    wts = basis.weights if mask is None else basis.weights * mask
    px = heat_kernel(basis, t, np.asarray(x)[:, None], basis.nodes[None, :]) * wts
    pw = heat_kernel(basis, s, np.asarray(w)[:, None], basis.nodes[None, :]) * wts
    return px @ cov @ pw.T


def kernel_integral_check_lm2(basis: SpectralBasis, beta: float, t_grid, s_grid, delta: float = 0.1,
                              x_points=None, rtol: float = 1e-12) -> KernelIntegralReport:
    """Fit ``c2`` with ``I(t,x;s,w) <= c2 e^{-(1-delta) mu1 (t+s)} (t+s)^{-beta/alpha}`` on the grid."""
    if np.any(np.asarray(t_grid) <= 0) or np.any(np.asarray(s_grid) <= 0):
        raise DomainError("time grids must be positive")
    x = np.linspace(-0.9, 0.9, 7) if x_points is None else np.asarray(x_points, dtype=float)
    cov = build_space_cov(uniform_grid(basis.M, 1.0, 1), riesz(beta)).matrix
    vals, ratios = [], []
    for t in t_grid:
        for s in s_grid:
            I = _kernel_bilinear(basis, beta, t, x, s, x, cov)
            bound = np.exp(-(1.0 - delta) * basis.mu1 * (t + s)) * (t + s) ** (-beta / basis.alpha)
            vals.append(I)
            ratios.append(I / bound)
    ratios = np.array(ratios)
    c2 = float(ratios.max())
    bad = ratios > c2 * (1.0 + rtol)
    return KernelIntegralReport("lm2", c2, int(bad.sum()), int(ratios.size), np.array(vals), ratios)


def kernel_integral_check_prop32(basis: SpectralBasis, beta: float, t_grid, delta: float = 0.1,
                                 x_points=None, rtol: float = 1e-12) -> KernelIntegralReport:
    """Equal-time case: fit ``c2`` with ``I(t,x;t,w) <= c2 e^{-(2-delta) mu1 t} t^{-beta/alpha}``."""
    if np.any(np.asarray(t_grid) <= 0):
        raise DomainError("time grid must be positive")
    x = np.linspace(-0.9, 0.9, 7) if x_points is None else np.asarray(x_points, dtype=float)
    cov = build_space_cov(uniform_grid(basis.M, 1.0, 1), riesz(beta)).matrix
    vals, ratios = [], []
    for t in t_grid:
        I = _kernel_bilinear(basis, beta, t, x, t, x, cov)
        vals.append(I)
        ratios.append(I / (np.exp(-(2.0 - delta) * basis.mu1 * t) * t ** (-beta / basis.alpha)))
    ratios = np.array(ratios)
    c2 = float(ratios.max())
    bad = ratios > c2 * (1.0 + rtol)
    return KernelIntegralReport("prop32", c2, int(bad.sum()), int(ratios.size), np.array(vals), ratios)


def kernel_integral_lower_check(basis: SpectralBasis, beta: float, t_grid, epsilon: float = 0.25,
                                n_points: int = 9, rtol: float = 1e-12) -> KernelIntegralReport:
    """Fit ``c2 > 0`` with ``int_{D_eps^2} p(t,x,.) p(t,w,.) Lambda >= c2 e^{-2 mu1 t} t^{-beta/alpha}``
    for ``x, w`` in ``D_eps`` with ``|x - w| <= t^{1/alpha}``."""
    pts = np.linspace(-(1.0 - epsilon), 1.0 - epsilon, n_points)
    mask = (np.abs(basis.nodes) < 1.0 - epsilon).astype(float)
    cov = build_space_cov(uniform_grid(basis.M, 1.0, 1), riesz(beta)).matrix
    vals, ratios = [], []
    for t in np.asarray(t_grid, dtype=float):
        I = _kernel_bilinear(basis, beta, t, pts, t, pts, cov, mask)
        close = np.abs(pts[:, None] - pts[None, :]) <= t ** (1.0 / basis.alpha)
        bound = np.exp(-2.0 * basis.mu1 * t) * t ** (-beta / basis.alpha)
        vals.append(I[close])
        ratios.append(I[close] / bound)
    ratios = np.concatenate(ratios)
    c2 = float(ratios.min())
    ok = c2 > 0
    bad = (ratios < c2 * (1.0 - rtol)) if ok else np.ones(ratios.size, dtype=bool)
    return KernelIntegralReport("prop31b", c2, int(bad.sum()), int(ratios.size), np.concatenate(vals), ratios)
