"""Invariant checks aggregated by ``fracshe verify``.

Each check returns a :class:`CheckResult`. ``margin`` is positive when the
check passes: for tolerance checks it is the tolerance minus the worst
error, for fitted-constant checks it is the smallest fitted constant (the
check also needs zero uncovered grid points).
"""
from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field

import numpy as np

from .bounds import (
    gronwall_curve,
    kernel_integral_check_lm2,
    kernel_integral_check_prop32,
    kernel_integral_lower_check,
    ml_bounds_check,
    ml_series,
    select_gamma_power,
    simplex_integral,
    simplex_integral_quadrature,
    stirling_lambda,
    stirling_ratio,
    timsc_check,
)
from .covariance import fbm, riesz
from .moments import renewal_second_moment
from .noise import NoiseStream, build_space_cov, build_time_cov, uniform_grid
from .spectral import (
    SpectralBasis,
    build_basis,
    chapman_kolmogorov_residual,
    fit_envelope,
    interior_mass_lower_check,
    near_diagonal_lower_check,
)

__all__ = ["CheckResult", "corrupt_eigenvalue", "run_checks", "CHECKS"]


@dataclass
class CheckResult:
    check: str
    status: str
    worst_case_margin: float
    detail: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return self.status == "PASS"

    def as_dict(self) -> dict:
        return {"check": self.check, "status": self.status,
                "worst_case_margin": self.worst_case_margin, "detail": self.detail}


def _status(ok: bool) -> str:
    return "PASS" if ok else "FAIL"


def corrupt_eigenvalue(basis: SpectralBasis, index: int, factor: float) -> SpectralBasis:
    """Copy of ``basis`` with one eigenvalue scaled (negative-control fixture)."""
    ev = basis.eigenvalues.copy()
    ev[index] *= factor
    return dataclasses.replace(basis, eigenvalues=ev)


def check_chapman_kolmogorov(basis, times=(0.1, 0.25, 0.5, 1.0), n_xy=5, tol=1e-6):
    pts = np.linspace(-0.8, 0.8, n_xy)
    x, y = np.meshgrid(pts, pts, indexing="ij")
    worst = max(float(chapman_kolmogorov_residual(basis, t, s, x, y).max()) for t in times for s in times)
    return CheckResult("chapman-kolmogorov", _status(worst < tol), tol - worst, {"max_residual": worst, "tol": tol})


def check_envelopes(basis, t_grid, xy_grid):
    results = []
    if basis.alpha == 2.0:
        fit = fit_envelope("riah-alpha2", basis, t_grid, xy_grid)
        margin = min(fit.constants.values()) if fit.ok else -1.0
        results.append(CheckResult("envelope-riah", _status(fit.ok and fit.violation_fraction == 0), margin,
                                   {"constants": fit.constants, "violation_fraction": fit.violation_fraction,
                                    "log_spread": fit.log_spread, "n_points": fit.n_points}))
    else:
        fit = fit_envelope("chenkim-stable", basis, t_grid, xy_grid)
        margin = min(fit.constants.values()) if fit.ok else -1.0
        results.append(CheckResult("envelope-chenkim", _status(fit.ok and fit.violation_fraction == 0), margin,
                                   {"constants": fit.constants, "violation_fraction": fit.violation_fraction,
                                    "n_points": fit.n_points}))
    for name, fn in (("lwbpD", near_diagonal_lower_check), ("prop31", interior_mass_lower_check)):
        f = fn(basis, t_grid)
        results.append(CheckResult(name, _status(f.ok and f.violation_fraction == 0), f.constants["c"],
                                   {"constants": f.constants, "n_points": f.n_points}))
    return results


def check_covariance(basis, beta=0.5, H=0.75, dt=0.01, K=16, draws=4000, seed=7):
    """Factor reconstruction plus a small sampled-covariance check (4 standard errors)."""
    grid = uniform_grid(basis.M, dt, K)
    space = build_space_cov(grid, riesz(beta))
    time_ = build_time_cov(grid, fbm(H))
    recon = max(space.reconstruction_error() / space.matrix.max(), time_.reconstruction_error() / time_.matrix.max())
    sub = np.arange(0, basis.M, max(1, basis.M // 8))
    L = space.factor[sub]
    z = NoiseStream(seed, 0).normal_block(draws, basis.M)
    samples = z @ L.T
    emp = samples.T @ samples / draws
    target = space.matrix[np.ix_(sub, sub)]
    se = np.sqrt((target ** 2 + np.outer(np.diag(target), np.diag(target))) / draws)
    zmax = float(np.max(np.abs(emp - target) / se))
    ok = recon < 1e-10 and zmax < 4.0
    return CheckResult("covariance", _status(ok), min(1e-10 - recon, 4.0 - zmax),
                       {"relative_reconstruction_error": recon, "max_abs_z": zmax,
                        "space_jitter": space.jitter, "time_jitter": time_.jitter})


def check_lmfact():
    worst, powers = 0.0, set()
    for n in (1, 2, 3):
        for zeta in (-0.5, -0.25, 0.0):
            for length in (0.5, 1.0, 2.0):
                exact = simplex_integral(n, zeta, 0.0, length)
                worst = max(worst, abs(simplex_integral_quadrature(n, zeta, 0.0, length) - exact) / exact)
    powers.add(select_gamma_power(1, -0.5, 0.0, 1.0))
    tol = 1e-8
    return CheckResult("lmfact-oracle", _status(worst < tol), tol - worst,
                       {"max_relative_error": worst, "oracle_selects_gamma_power": sorted(powers)})


def check_ml_series():
    exp_err = abs(ml_series(1.0, 1.0, 1) - (math.e - 1.0))
    fits = [ml_bounds_check(np.linspace(0.5, 4.0, 15), nu, k) for nu in (0.25, 0.5, 1.0) for k in (0, 1)]
    violations = sum(f.violations for f in fits)
    margin = min(min(f.C1, f.c1p, f.c1) for f in fits)
    ok = violations == 0 and exp_err < 1e-12 and margin > 0
    return CheckResult("ml-series", _status(ok), margin,
                       {"violations": violations, "exp_series_error": exp_err,
                        "fits": [dataclasses.asdict(f) for f in fits]})


def check_stirling():
    err = abs(stirling_ratio(4, 0.5) - 2.0 / math.sqrt(24.0))
    lams = {tau: stirling_lambda(tau) for tau in (0.25, 0.5, 0.75, 1.5)}
    n = np.arange(1, 201)
    violations = 0
    for tau, lam in lams.items():
        r = stirling_ratio(n, tau)
        violations += int(np.sum((r > lam ** n * (1 + 1e-12)) | (r < lam ** (-n.astype(float)) * (1 - 1e-12))))
    ok = err < 1e-12 and violations == 0 and all(np.isfinite(list(lams.values())))
    return CheckResult("stirling", _status(ok), min(lams.values()) - 1.0 if ok else -1.0,
                       {"lambda": {str(k): v for k, v in lams.items()}, "violations": violations})


def check_timsc(alpha=2.0, beta=0.5):
    w = np.linspace(-2.0, 2.0, 9)
    coarse = timsc_check(alpha, beta, [0.1, 1.0, 10.0], w)
    fine = timsc_check(alpha, beta, [0.1, 1.0, 10.0], np.linspace(-2.0, 2.0, 17))
    refine = abs(fine.sup - coarse.sup) / coarse.sup
    even = float(np.max(np.abs(coarse.values - coarse.values[:, ::-1]) / coarse.values))
    ok = np.isfinite(coarse.sup) and refine < 0.02 and coarse.spread < 0.10 and even < 1e-8
    return CheckResult("timsc", _status(ok), min(0.02 - refine, 0.10 - coarse.spread),
                       {"sup": coarse.sup, "refinement_change": refine, "t_spread": coarse.spread,
                        "evenness_error": even})


def check_lm2(basis, beta=0.5, delta=0.1):
    g = np.geomspace(0.1, 2.0, 8)
    up = kernel_integral_check_lm2(basis, beta, g, g, delta)
    diag = kernel_integral_check_prop32(basis, beta, g, delta)
    lo = kernel_integral_lower_check(basis, beta, g)
    return [CheckResult(r.name, _status(r.violations == 0 and r.constant > 0), r.constant,
                        {"c2": r.constant, "violations": r.violations, "n_points": r.n_points})
            for r in (up, diag, lo)]


def check_gronwall(basis, beta=0.5, xi=1.0, dt=0.005, T=2.0):
    K = int(round(T / dt))
    r = renewal_second_moment(basis, xi, beta, 1.0, dt, K, x_points=(0.0,))
    rho = (basis.alpha - beta) / basis.alpha
    bound = gronwall_curve(1.0, xi * xi, rho).verify_on(r.times, r.diagonal[:, 0])
    return CheckResult("gronwall", _status(bound.violations == 0), bound.c2,
                       {"c2": bound.c2, "c3": bound.c3, "violations": bound.violations})


CHECKS = ("chapman-kolmogorov", "envelopes", "covariance", "lmfact-oracle", "ml-series",
          "stirling", "timsc", "lm2", "gronwall")


def run_checks(alpha=2.0, N=64, M=256, beta=0.5, corrupt=None) -> list[CheckResult]:
    """Run every check; ``corrupt={"index": i, "factor": f}`` perturbs one eigenvalue."""
    basis = build_basis(alpha, N, M)
    if corrupt:
        basis = corrupt_eigenvalue(basis, int(corrupt["index"]), float(corrupt["factor"]))
    t_grid = np.geomspace(0.05, 2.0, 10)
    xy = np.linspace(-0.95, 0.95, 15)
    results = [check_chapman_kolmogorov(basis)]
    results += check_envelopes(basis, t_grid, xy)
    results.append(check_covariance(basis, beta))
    results.append(check_lmfact())
    results.append(check_ml_series())
    results.append(check_stirling())
    results.append(check_timsc(alpha, beta))
    results += check_lm2(basis, beta)
    results.append(check_gronwall(basis, beta))
    return results
