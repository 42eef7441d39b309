"""Three routes to solution moments, plus the fits that read growth rates off them.

* :func:`mc_moments` averages ``|u_t(x)|^p`` over simulated paths.
* :func:`renewal_second_moment` marches the closed Volterra equation for the
  two-point function ``f_t(x, w) = E[u_t(x) u_t(w)]`` (sigma = identity,
  white-in-time noise). With left-rectangle quadrature in ``s`` it is the
  exact second moment of the pathwise scheme, so it referees the Monte Carlo
  layer up to sampling error only.
* :func:`chaos_second_moment_fbm` integrates the Wiener-chaos terms for
  fBm-in-time noise by Monte Carlo; :func:`chaos_term_quadrature` is a
  deterministic oracle for the first term.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.special import gammaln, logsumexp, roots_legendre
from scipy.stats import linregress

from .covariance import NoiseSpec, fbm, riesz, riesz_point_regularized
from .exceptions import ConfigurationError, DomainError, FitError
from .noise import CovarianceFactor, NoiseGrid, NoiseStream, build_space_cov
from .solver import SigmaSpec, _check_setup, march, u0_on_grid
from .spectral import SpectralBasis, heat_kernel_images, semigroup_constant_images

__all__ = [
    "MomentEstimate",
    "mc_moments",
    "TwoPointFunction",
    "renewal_second_moment",
    "picard_lower_series",
    "ChaosTerm",
    "ChaosResult",
    "chaos_second_moment_fbm",
    "chaos_term_quadrature",
    "LyapunovFit",
    "lyapunov_fit",
    "RhoFit",
    "rho_fit",
]

Z95 = 1.959963984540054


# ---------------------------------------------------------------------------
# Monte Carlo


@dataclass(eq=False)
class MomentEstimate:
    """Monte Carlo moments ``E|u_t(x)|^p`` indexed ``[p, t, x]``.

    ``mean`` and ``mean_se`` carry the signed first moment, used for the
    martingale check. ``usable`` is False when every path diverged.
    """

    p: tuple
    times: np.ndarray
    x_points: np.ndarray
    estimates: np.ndarray
    ci_half: np.ndarray
    mean: np.ndarray
    mean_se: np.ndarray
    n_replicates: int
    n_diverged: int
    seed: int
    usable: bool = True
    samples: np.ndarray | None = field(default=None, repr=False)

    def curve(self, p, x_index: int = 0) -> np.ndarray:
        return self.estimates[self.p.index(p), :, x_index]


def _steps_for(times, dt: float, K: int) -> np.ndarray:
    times = np.asarray(times, dtype=float)
    steps = np.rint(times / dt).astype(int)
    if np.any(np.abs(steps * dt - times) > 1e-9 * max(1.0, float(times.max()))) or np.any(steps < 0) or np.any(steps > K):
        raise ConfigurationError(f"requested times {times} are not grid times with dt={dt}, K={K}")
    return steps


def _group_stats(values: np.ndarray, group: int):
    """Mean and standard error by batch means over consecutive groups of rows."""
    n = values.shape[0]
    mean = values.mean(axis=0)
    n_groups = n // group
    if n_groups < 2:
        se = values.std(axis=0, ddof=1) / np.sqrt(n) if n > 1 else np.full(mean.shape, np.inf)
        return mean, se
    usable = values[: n_groups * group].reshape((n_groups, group) + values.shape[1:])
    gm = usable.mean(axis=1)
    se = gm.std(axis=0, ddof=1) / np.sqrt(n_groups)
    return mean, se


def mc_moments(basis: SpectralBasis, noise: NoiseSpec, sigma: SigmaSpec, u0, grid: NoiseGrid,
               p_list, times, x_points, replicates: int, seed: int, *, batch_size: int = 64,
               workers: int = 1, ci_group: int = 10, factor: CovarianceFactor | None = None,
               keep_samples: bool = False) -> MomentEstimate:
    """Monte Carlo moments over ``replicates`` independent paths.

    Replicates are split into fixed batches of ``batch_size``; ``workers``
    threads process batches in any order, and results are reassembled by
    replicate index, so the output does not depend on ``workers``. Confidence
    half-widths (95%) use batch means over groups of ``ci_group`` replicates.
    Diverged paths are excluded and counted.
    """
    if replicates < 100:
        raise ConfigurationError(f"need at least 100 replicates, got {replicates}")
    _check_setup(basis, noise, grid)
    if factor is None:
        factor = build_space_cov(grid, noise.spatial)
    p_list = tuple(p_list)
    x_points = np.atleast_1d(np.asarray(x_points, dtype=float))
    steps = _steps_for(times, grid.dt, grid.K)
    K = int(steps.max())
    phix = basis.eigenfunctions(x_points).T
    c0 = basis.coefficients(u0_on_grid(u0, basis.nodes))
    record = {int(k): i for i, k in enumerate(steps)}
    batches = [range(b, min(b + batch_size, replicates)) for b in range(0, replicates, batch_size)]

    def run(reps):
        obs = np.empty((len(reps), steps.size, x_points.size))

        def observe(k, c):
            if k in record:
                obs[:, record[k], :] = c @ phix

        def normals(start, count):
            return np.stack([NoiseStream(seed, r).normal_block(count, grid.M, start) for r in reps])

        _, diverged = march(basis, noise.xi, sigma, np.tile(c0, (len(reps), 1)), factor, grid.dt, K, normals, observe)
        return obs, diverged

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(run, batches))
    else:
        results = [run(b) for b in batches]
    obs = np.concatenate([r[0] for r in results])
    diverged = np.concatenate([r[1] for r in results])
    good = obs[~diverged]
    n_div = int(diverged.sum())
    shape = (len(p_list), steps.size, x_points.size)
    if good.shape[0] == 0:
        nan = np.full(shape, np.nan)
        return MomentEstimate(p_list, np.asarray(times, float), x_points, nan, nan, nan[0], nan[0],
                              replicates, n_div, seed, usable=False)
    est = np.empty(shape)
    ci = np.empty(shape)
    for i, p in enumerate(p_list):
        m, se = _group_stats(np.abs(good) ** p, ci_group)
        est[i], ci[i] = m, Z95 * se
    mean, mean_se = _group_stats(good, ci_group)
    return MomentEstimate(p_list, np.asarray(times, float), x_points, est, ci, mean, mean_se,
                          replicates, n_div, seed, samples=good if keep_samples else None)


# ---------------------------------------------------------------------------
# renewal oracle


@dataclass(eq=False)
class TwoPointFunction:
    """Solution of the renewal equation.

    ``diagonal[k, j]`` is ``E|u_{t_k}(x_j)|^2`` at the recorded points and
    ``snapshots`` maps a step index to the ``N x N`` coefficient matrix of
    ``f_t``, so ``f_t(x, w) = phi(x)^T A phi(w)``.
    """

    basis: SpectralBasis
    times: np.ndarray
    x_points: np.ndarray
    diagonal: np.ndarray
    snapshots: dict
    xi: float

    def at(self, step: int, x, w) -> np.ndarray:
        A = self.snapshots[step]
        px = self.basis.eigenfunctions(x)
        pw = self.basis.eigenfunctions(w)
        return np.einsum("...i,ij,...j->...", px, A, pw)

    def on_grid(self, step: int) -> np.ndarray:
        phi = self.basis.phi
        return phi @ self.snapshots[step] @ phi.T


def renewal_second_moment(basis: SpectralBasis, xi: float, beta: float, u0, dt: float, K: int,
                          x_points=(0.0,), snapshot_steps=(), spatial_cov: np.ndarray | None = None) -> TwoPointFunction:
    """March ``f_t = G_t (x) G_t + xi^2 int_0^t (P_{t-s} (x) P_{t-s}) [Lambda f_s] ds``.

    The ``s`` integral uses the left-rectangle rule on the step grid, and
    ``Lambda`` is the cell-averaged Riesz matrix. Because the spectral kernel
    satisfies ``P_{(k-i) dt} = P_dt^{k-i}``, the history sum
    ``H_k = sum_{i<k} D^{k-i} * B_i`` obeys ``H_{k+1} = D * (H_k + B_k)`` and
    each step costs O(1) history work instead of O(k).
    """
    if xi < 0:
        raise DomainError(f"noise level must be >= 0, got {xi}")
    if spatial_cov is None:
        from .noise import uniform_grid

        spatial_cov = build_space_cov(uniform_grid(basis.M, dt, 1), riesz(beta)).matrix
    x_points = np.atleast_1d(np.asarray(x_points, dtype=float))
    phi, analysis = basis.phi, basis.analysis
    phix = basis.eigenfunctions(x_points)
    decay = basis.decay(dt)
    D = np.outer(decay, decay)
    g = basis.coefficients(u0_on_grid(u0, basis.nodes))
    H = np.zeros((basis.N, basis.N))
    diag = np.empty((K + 1, x_points.size))
    snaps = {}
    wanted = {int(s) for s in snapshot_steps}
    scale = xi * xi * dt
    for k in range(K + 1):
        A = np.outer(g, g) + H
        diag[k] = np.einsum("ji,ik,jk->j", phix, A, phix)
        if k in wanted:
            snaps[k] = A.copy()
        if k == K:
            break
        if scale > 0:
            f = phi @ A @ phi.T
            B = analysis.T @ (spatial_cov * f) @ analysis
            H = D * (H + scale * B)
        else:
            H = D * H
        g = g * decay
    return TwoPointFunction(basis, np.arange(K + 1) * dt, x_points, diag, snaps, float(xi))


def _renewal_direct(basis, xi, spatial_cov, u0, dt, K):
    """Naive O(K^2) left-rectangle Volterra sum; returns coefficient matrices."""
    phi, analysis = basis.phi, basis.analysis
    g0 = basis.coefficients(u0_on_grid(u0, basis.nodes))
    mu = basis.eigenvalues
    out, Bs = [], []
    for k in range(K + 1):
        gk = g0 * np.exp(-mu * k * dt)
        A = np.outer(gk, gk)
        for i, B in enumerate(Bs):
            lag = (k - i) * dt
            A = A + xi * xi * dt * np.outer(np.exp(-mu * lag), np.exp(-mu * lag)) * B
        out.append(A)
        Bs.append(analysis.T @ (spatial_cov * (phi @ A @ phi.T)) @ analysis)
    return out


# ---------------------------------------------------------------------------
# Picard lower series


def picard_lower_series(t: float, xi: float, l_sigma: float, C: float, c: float, mu1: float,
                        alpha: float, beta: float, n_max: int | None = None, log: bool = False,
                        rtol: float = 1e-12):
    """``c e^{-2 mu_1 t} sum_{n>=1} (C xi l_sigma)^{2n} (t^n / n!)^{(alpha-beta)/alpha}``.

    Summed in log space. With ``n_max=None`` terms are added until the
    remaining tail, bounded by a geometric series once the term ratio drops
    below 1/2, is under ``rtol`` times the partial sum. ``log=True`` returns
    the natural log of the value.
    """
    if C <= 0 or c <= 0:
        raise DomainError("existential constants C and c must be positive")
    if not 0 < beta < alpha:
        raise DomainError("need 0 < beta < alpha")
    if t <= 0:
        raise DomainError("need t > 0")
    nu = (alpha - beta) / alpha
    prefix = math.log(c) - 2.0 * mu1 * t
    if xi == 0 or l_sigma == 0:
        return -math.inf if log else 0.0
    a = 2.0 * math.log(C * xi * l_sigma)

    def log_terms(n):
        return n * a + nu * (n * math.log(t) - gammaln(n + 1.0))

    if n_max is not None:
        if n_max < 1:
            raise DomainError("n_max must be >= 1")
        total = logsumexp(log_terms(np.arange(1, n_max + 1, dtype=float)))
    else:
        chunk = 1024
        start = 1
        parts = []
        while True:
            n = np.arange(start, start + chunk, dtype=float)
            lt = log_terms(n)
            parts.append(logsumexp(lt))
            total = logsumexp(parts)
            log_ratio = a + nu * (math.log(t) - math.log(n[-1] + 1.0))
            if log_ratio < math.log(0.5) and lt[-1] + math.log(2.0) < total + math.log(rtol):
                break
            start += chunk
    out = prefix + float(total)
    return out if log else math.exp(out)


# ---------------------------------------------------------------------------
# Wiener chaos


@dataclass
class ChaosTerm:
    """One chaos contribution ``xi^{2n} n! ||h_n||^2`` with its Monte Carlo error."""

    n: int
    value: float
    raw: float
    stderr: float
    low_precision: bool = False

    @property
    def rel_error(self) -> float:
        return self.stderr / abs(self.value) if self.value else math.inf


@dataclass
class ChaosResult:
    terms: list
    total: float
    total_stderr: float
    t: float
    x: float


def _constant_u0(u0):
    if callable(u0):
        return None
    arr = np.asarray(u0, dtype=float)
    if arr.ndim == 0:
        return float(arr)
    return None


def _chaos_batch(n, t, x, B, rng, basis, beta, H, h, G, kernel, pairing):
    """Importance-weighted integrand values for ``B`` samples of the n-th term."""
    C_H = H * (2.0 * H - 1.0)
    ts = np.sort(rng.random((B, n)), axis=1) * t
    ss = np.sort(rng.random((B, n)), axis=1) * t
    weight = np.full(B, (t ** n / math.factorial(n)) ** 2)
    if pairing == "all" and n > 1:
        perm = np.argsort(rng.random((B, n)), axis=1)
        ss_paired_idx = perm
        weight *= math.factorial(n)
    else:
        ss_paired_idx = np.broadcast_to(np.arange(n), (B, n))

    def chain(times):
        pts = np.empty((B, n))
        w = np.ones(B)
        upper_t = np.full(B, t)
        upper_x = np.full(B, x)
        for i in range(n - 1, -1, -1):
            lag = upper_t - times[:, i]
            lag = np.maximum(lag, 1e-300)
            if kernel == "images":
                sd = np.sqrt(2.0 * lag)
                z = rng.standard_normal(B)
                cand = upper_x + sd * z
                inside = np.abs(cand) < 1.0
                q = np.exp(-0.5 * z * z) / (np.sqrt(2.0 * np.pi) * sd)
                p = np.where(inside, heat_kernel_images(lag, upper_x, np.clip(cand, -1, 1)), 0.0)
            else:
                sd = np.sqrt(2.0) * np.maximum(lag ** (1.0 / basis.alpha), 1.0 / basis.N)
                use_normal = rng.random(B) < 0.5
                z = rng.standard_normal(B)
                cand = np.where(use_normal, upper_x + sd * z, rng.uniform(-1.0, 1.0, B))
                inside = np.abs(cand) < 1.0
                dens = np.exp(-0.5 * ((cand - upper_x) / sd) ** 2) / (np.sqrt(2.0 * np.pi) * sd)
                q = 0.5 * dens + 0.25 * inside
                px = basis.eigenfunctions(upper_x)
                pc = basis.eigenfunctions(np.clip(cand, -1, 1))
                p = np.where(inside, np.sum(np.exp(-np.outer(lag, basis.eigenvalues)) * px * pc, axis=1), 0.0)
            w *= p / q
            pts[:, i] = cand
            upper_t = times[:, i]
            upper_x = cand
        return pts, w

    xs, wx = chain(ts)
    ys, wy = chain(ss)
    rows = np.arange(B)[:, None]
    s_pair = ss[rows, ss_paired_idx]
    y_pair = ys[rows, ss_paired_idx]
    lag_ts = np.abs(ts - s_pair)
    gam = C_H * np.maximum(lag_ts, 1e-300) ** (2.0 * H - 2.0)
    lam = riesz_point_regularized(beta, xs - y_pair, h)
    val = weight * wx * wy * np.prod(gam * lam, axis=1)
    return val * G(ts[:, 0], xs[:, 0]) * G(ss[:, 0], ys[:, 0])


def chaos_second_moment_fbm(basis: SpectralBasis, xi: float, beta: float, H: float, u0, t: float, x: float,
                            n_max: int = 3, mc_samples: int = 1_000_000, seed: int = 0, *,
                            h: float | None = None, pairing: str = "identity", kernel: str = "auto",
                            batch: int = 100_000, workers: int = 1, rel_tol: float = 0.1) -> ChaosResult:
    """Truncated chaos series for ``E|u_t(x)|^2`` under fBm-in-time noise.

    Each term integrates over ``T_n(t) x T_n(t) x D^{2n}``. Times are ordered
    uniforms. Space points are drawn backward along two chains from ``x``,
    with proposals matched to the heat kernel and importance weights
    ``p_D / q``. ``kernel="images"`` (the default for ``alpha = 2``) uses the
    exact method-of-images kernel; ``"spectral"`` uses the truncated series
    with a defensive Gaussian/uniform mixture proposal. The spatial kernel is
    the Riesz kernel averaged over cells of width ``h``.

    ``pairing="identity"`` integrates the displayed form, which pairs ``t_i``
    with ``s_i`` only. ``pairing="all"`` also samples the other pairings of
    the symmetrization and estimates the full ``n! ||sym h_n||^2``.
    """
    if not 0.5 < H < 1.0:
        raise DomainError(f"need H in (1/2, 1), got {H}")
    if not 0 < beta < min(basis.alpha, 1.0):
        raise DomainError(f"need 0 < beta < min(alpha, 1), got {beta}")
    if not 1 <= n_max <= 3:
        raise ConfigurationError("chaos series is evaluated for 1 <= n_max <= 3")
    if t <= 0 or not -1.0 < x < 1.0:
        raise DomainError("need t > 0 and x inside (-1, 1)")
    if pairing not in ("identity", "all"):
        raise ConfigurationError(f"unknown pairing {pairing!r}")
    if kernel == "auto":
        kernel = "images" if basis.alpha == 2.0 else "spectral"
    if kernel == "images" and basis.alpha != 2.0:
        raise ConfigurationError("the images kernel is exact only for alpha = 2")
    h = 2.0 / basis.M if h is None else h
    const = _constant_u0(u0)
    if kernel == "images" and const is not None:
        def G(s, y):
            return semigroup_constant_images(s, y, const)
    else:
        c0 = basis.coefficients(u0_on_grid(u0, basis.nodes))

        def G(s, y):
            return np.sum(c0 * np.exp(-np.outer(s, basis.eigenvalues)) * basis.eigenfunctions(y), axis=-1)
    g_tx = float(G(np.array([t]), np.array([x]))[0])
    terms = [ChaosTerm(0, g_tx ** 2, g_tx ** 2, 0.0)]
    sizes = [min(batch, mc_samples - b) for b in range(0, mc_samples, batch)]
    for n in range(1, n_max + 1):
        def job(i, n=n):
            rng = np.random.Generator(np.random.Philox(
                key=np.random.SeedSequence(int(seed), spawn_key=(n, i)).generate_state(2, np.uint64)))
            v = _chaos_batch(n, t, x, sizes[i], rng, basis, beta, H, h, G, kernel, pairing)
            return v.sum(), (v * v).sum()

        if workers > 1:
            with ThreadPoolExecutor(max_workers=workers) as pool:
                sums = list(pool.map(job, range(len(sizes))))
        else:
            sums = [job(i) for i in range(len(sizes))]
        s1 = sum(s[0] for s in sums)
        s2 = sum(s[1] for s in sums)
        raw = s1 / mc_samples
        var = max(s2 / mc_samples - raw * raw, 0.0) * mc_samples / (mc_samples - 1)
        se = math.sqrt(var / mc_samples)
        scale = xi ** (2 * n)
        term = ChaosTerm(n, scale * raw, raw, scale * se)
        term.low_precision = bool(term.rel_error > rel_tol)
        terms.append(term)
    total = sum(tm.value for tm in terms)
    total_se = math.sqrt(sum(tm.stderr ** 2 for tm in terms))
    return ChaosResult(terms, total, total_se, float(t), float(x))


def chaos_term_quadrature(basis: SpectralBasis, beta: float, H: float, u0, t: float, x: float,
                          order: int = 64) -> float:
    """Deterministic value of the first chaos term ``n! ||h_1||^2`` (without ``xi^2``).

    Space is integrated on the basis grid against the cell-averaged Riesz
    matrix. In time the integrand is symmetric in ``(t_1, s_1)``; with
    ``r = s_1 - t_1 > 0`` the substitution ``v = r^{2H-1}`` turns
    ``gamma(r) dr`` into the constant ``C_H / (2H - 1) dv``. Both remaining
    variables are graded toward ``t`` where the heat kernels concentrate.
    """
    from .noise import uniform_grid

    C_H = H * (2.0 * H - 1.0)
    e = 2.0 * H - 1.0
    C = build_space_cov(uniform_grid(basis.M, 1.0, 1), riesz(beta)).matrix
    w = basis.weights
    c0 = basis.coefficients(u0_on_grid(u0, basis.nodes))
    phix = basis.eigenfunctions(x)
    mu = basis.eigenvalues
    nodes, weights = roots_legendre(order)
    g = (nodes + 1.0) / 2.0
    gw = weights / 2.0
    # a = t1 = t (1 - g^2): graded toward a = t
    a = t * (1.0 - g ** 2)
    da = gw * 2.0 * t * g

    def field_at(times):
        # rows: p(t - s, x, y_j) G_s(y_j) w_j for each s in times
        kern = (np.exp(-np.outer(t - times, mu)) * phix) @ basis.phi.T
        Gs = (np.exp(-np.outer(times, mu)) * c0) @ basis.phi.T
        return kern * Gs * w

    fa = field_at(a)
    total = 0.0
    for ai, dai, fai in zip(a, da, fa):
        vmax = (t - ai) ** e
        # v = vmax (1 - g^2) grades s1 = a + v^{1/e} toward t
        v = vmax * (1.0 - g ** 2)
        dv = gw * 2.0 * vmax * g
        s1 = ai + v ** (1.0 / e)
        fs = field_at(s1)
        vals = fs @ (C @ fai)
        total += dai * np.dot(dv, vals)
    return float(2.0 * C_H / e * total)


# ---------------------------------------------------------------------------
# growth fits


@dataclass
class LyapunovFit:
    slope: float
    intercept: float
    r2: float
    slope_se: float
    n_points: int

    @property
    def slope_ci(self) -> float:
        return Z95 * self.slope_se


def _window(t, y, window):
    t = np.asarray(t, dtype=float)
    y = np.asarray(y, dtype=float)
    if window is not None:
        lo, hi = window
        keep = (t >= lo - 1e-12) & (t <= hi + 1e-12)
        t, y = t[keep], y[keep]
    return t, y


def lyapunov_fit(t, values, window=None, *, log: bool = False) -> LyapunovFit:
    """Least squares of ``log values`` against ``t`` inside ``window``.

    Pass ``log=True`` when ``values`` already hold logarithms (avoids
    overflow for fast-growing curves).
    """
    t, y = _window(t, values, window)
    if t.size < 4:
        raise FitError(f"need at least 4 points in the window, got {t.size}")
    if not log:
        if np.any(~(y > 0)):
            raise FitError("moment estimates must be positive inside the fit window")
        y = np.log(y)
    if not np.all(np.isfinite(y)):
        raise FitError("non-finite values in the fit window")
    res = linregress(t, y)
    return LyapunovFit(float(res.slope), float(res.intercept), float(res.rvalue ** 2), float(res.stderr), int(t.size))


@dataclass
class RhoFit:
    rho_hat: float
    ci: float
    intercept: float
    r2: float


def rho_fit(t, values, window=None, *, log_moment: bool = True) -> RhoFit:
    """Power-law exponent in ``t``.

    With ``log_moment=True`` fits ``log log m`` against ``log t`` (the growth
    exponent of ``log E|u|^2``); with ``False`` fits ``log m`` against
    ``log t`` (the power law of a single chaos term).
    """
    t, m = _window(t, values, window)
    if t.size < 3:
        raise FitError(f"need at least 3 points, got {t.size}")
    if np.any(t <= 0) or np.any(~(m > 0)):
        raise FitError("rho fit needs positive times and positive values")
    y = np.log(m)
    if log_moment:
        if np.any(y <= 0):
            raise FitError("log-moment fit needs values above 1")
        y = np.log(y)
    res = linregress(np.log(t), y)
    return RhoFit(float(res.slope), float(Z95 * res.stderr), float(res.intercept), float(res.rvalue ** 2))
