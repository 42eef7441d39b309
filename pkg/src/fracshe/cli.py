"""Command-line runner: ``fracshe {simulate,scan-xi,fit-rho,verify}``.

Every run is driven by one YAML file (merged over :data:`DEFAULT_CONFIG`);
only ``--seed`` and ``--out`` override it. Each output file carries the seed
and the SHA-256 of the resolved configuration (without the output path and
the worker count), and floats are written with 17 significant digits, so
identical inputs give byte-identical files.

Exit codes: 0 success or finding, 2 invalid configuration, 3 failed
verification, 4 numerical failure.
"""
from __future__ import annotations

import argparse
import copy
import csv
import hashlib
import json
import math
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import yaml

from . import __version__
from .bounds import rho_exponent
from .covariance import NoiseSpec, SpatialKernel, TemporalKernel, dalang_check
from .exceptions import (
    ConfigurationError,
    CovarianceNotPSDError,
    DomainError,
    FitError,
    QuadratureError,
    TruncationError,
)
from .moments import chaos_second_moment_fbm, lyapunov_fit, mc_moments, renewal_second_moment, rho_fit
from .noise import build_space_cov, uniform_grid
from .solver import SigmaSpec, validate_assumptions
from .spectral import build_basis
from .verify import run_checks

EXIT_OK, EXIT_CONFIG, EXIT_VERIFY, EXIT_NUMERIC = 0, 2, 3, 4

DEFAULT_CONFIG = {
    "operator": {"alpha": 2.0, "N": 64, "M": 256},
    "noise": {
        "xi": 1.0,
        "xi_scan": [float(v) for v in np.geomspace(0.05, 8.0, 12)],
        "spatial": {"kind": "riesz", "beta": 0.5},
        "temporal": {"kind": "white"},
    },
    "sigma": {"kind": "identity", "lam": 1.0},
    "u0": {"kind": "constant", "value": 1.0},
    "epsilon": 0.25,
    "grids": {"dt": 0.005, "T": 1.0, "x_points": [-0.5, 0.0, 0.5], "t_points": [0.25, 0.5, 1.0]},
    "moments": {"p": [2, 4], "batch_size": 64},
    "replicates": 10000,
    "seed": 20240601,
    "workers": 1,
    "scan": {"mode": "renewal", "dt": 0.001, "T": 1.0, "window": [0.5, 1.0], "x": 0.0, "replicates": 2000},
    "rho": {"t_min": 0.0005, "t_max": 0.004, "n_t": 6, "n_max": 2, "mc_samples": 200000,
            "x": 0.0, "h": None, "pairing": "identity", "kernel": "auto"},
    "verify": {"corrupt_eigenvalue": None},
    "outputs": "out",
}


# sections that describe one object and are replaced whole rather than merged
_REPLACED = {"spatial", "temporal", "sigma", "u0", "corrupt_eigenvalue"}


def _merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for key, value in over.items():
        if key not in out:
            raise ConfigurationError(f"unknown config key {key!r}")
        if isinstance(out[key], dict) and isinstance(value, dict) and key not in _REPLACED:
            out[key] = _merge(out[key], value)
        else:
            out[key] = value
    return out


# keys that cannot change any number in the outputs
_UNHASHED = {"outputs", "workers"}


def config_hash(cfg: dict) -> str:
    body = {k: v for k, v in cfg.items() if k not in _UNHASHED}
    return hashlib.sha256(json.dumps(body, sort_keys=True, separators=(",", ":")).encode()).hexdigest()


def load_config(path: str | None, seed: int | None = None, out: str | None = None) -> dict:
    user = {}
    if path is not None:
        try:
            user = yaml.safe_load(Path(path).read_text()) or {}
        except (OSError, yaml.YAMLError) as exc:
            raise ConfigurationError(f"cannot read config {path}: {exc}") from exc
        if not isinstance(user, dict):
            raise ConfigurationError("config must be a mapping")
    cfg = _merge(DEFAULT_CONFIG, user)
    if seed is not None:
        cfg["seed"] = int(seed)
    if out is not None:
        cfg["outputs"] = str(out)
    return cfg


@dataclass
class Setup:
    """Objects built from a validated configuration."""

    cfg: dict
    hash: str
    basis: object
    noise: NoiseSpec
    sigma: SigmaSpec
    u0: object


def _u0(spec: dict):
    kind = spec.get("kind", "constant")
    if kind == "constant":
        return float(spec.get("value", 1.0))
    if kind == "sine":
        amp = float(spec.get("amplitude", 1.0))
        return lambda x: amp * np.sin(np.pi * (np.asarray(x) + 1.0) / 2.0)
    raise ConfigurationError(f"unknown u0 kind {kind!r}")


def build_setup(cfg: dict) -> Setup:
    """Validate a configuration (Dalang condition, data assumptions) and build its objects."""
    try:
        op = cfg["operator"]
        basis = build_basis(float(op["alpha"]), int(op["N"]), int(op["M"]))
        sp = dict(cfg["noise"]["spatial"])
        spatial = SpatialKernel(sp.pop("kind"), **{k: (tuple(v) if k == "hurst" else v) for k, v in sp.items()})
        tp = dict(cfg["noise"]["temporal"])
        temporal = TemporalKernel(tp.pop("kind"), **tp)
        noise = NoiseSpec(float(cfg["noise"]["xi"]), spatial, temporal)
        sigma = SigmaSpec(cfg["sigma"]["kind"], float(cfg["sigma"].get("lam", 1.0)))
        u0 = _u0(cfg["u0"])
    except (KeyError, TypeError) as exc:
        raise ConfigurationError(f"malformed config: {exc}") from exc
    dal = dalang_check(spatial, basis.alpha)
    if not dal.holds:
        raise ConfigurationError(f"Dalang condition fails: {dal.rule}")
    report = validate_assumptions(u0, float(cfg["epsilon"]), sigma, basis.nodes)
    if not report.ok:
        raise ConfigurationError("; ".join(report.messages))
    if int(cfg["replicates"]) < 100:
        raise ConfigurationError("replicates must be at least 100")
    return Setup(cfg, config_hash(cfg), basis, noise, sigma, u0)


def _g(v) -> str:
    return format(float(v), ".17g")


def _write_csv(path: Path, header, rows) -> None:
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def _write_plot(path: Path, cols) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w") as fh:
        for row in zip(*cols):
            fh.write(" ".join(_g(v) for v in row) + "\n")


def _steps(T, dt):
    K = int(round(T / dt))
    if abs(K * dt - T) > 1e-9 * max(T, 1.0):
        raise ConfigurationError(f"T={T} is not a multiple of dt={dt}")
    return K


# ---------------------------------------------------------------------------
# commands


def cmd_simulate(setup: Setup, out: Path, plot: bool) -> dict:
    cfg = setup.cfg
    if setup.noise.temporal.kind != "white":
        raise ConfigurationError("simulate needs a white temporal kernel")
    g = cfg["grids"]
    dt = float(g["dt"])
    K = _steps(float(g["T"]), dt)
    grid = uniform_grid(setup.basis.M, dt, K)
    times = [float(t) for t in g["t_points"]]
    xs = [float(x) for x in g["x_points"]]
    p_list = tuple(int(p) if float(p).is_integer() else float(p) for p in cfg["moments"]["p"])
    est = mc_moments(setup.basis, setup.noise, setup.sigma, setup.u0, grid, p_list, times, xs,
                     int(cfg["replicates"]), int(cfg["seed"]), batch_size=int(cfg["moments"]["batch_size"]),
                     workers=int(cfg["workers"]))
    rows = []
    for ti, t in enumerate(times):
        for xi_, x in enumerate(xs):
            for pi, p in enumerate(p_list):
                rows.append([_g(t), _g(x), _g(p), _g(est.estimates[pi, ti, xi_]), _g(est.ci_half[pi, ti, xi_]),
                             est.n_diverged, cfg["seed"], setup.hash])
    _write_csv(out / "moments.csv", ["t", "x", "p", "estimate", "ci_half", "n_diverged", "seed", "config_hash"], rows)
    if plot:
        for pi, p in enumerate(p_list):
            for xi_, x in enumerate(xs):
                _write_plot(out / "plot" / f"moments_p{_g(p)}_x{_g(x)}.dat", (times, est.estimates[pi, :, xi_]))
    return {"replicates": est.n_replicates, "n_diverged": est.n_diverged, "usable": est.usable}


def _crossing(xis, slopes):
    for i in range(len(xis) - 1):
        if slopes[i] <= 0 < slopes[i + 1]:
            return xis[i], xis[i + 1]
    return None


def cmd_scan_xi(setup: Setup, out: Path, plot: bool) -> dict:
    cfg = setup.cfg
    sc = cfg["scan"]
    xis = [float(v) for v in cfg["noise"]["xi_scan"]]
    if len(xis) < 2 or any(b <= a for a, b in zip(xis, xis[1:])):
        raise ConfigurationError("xi_scan must be strictly increasing with at least two values")
    dt = float(sc["dt"])
    K = _steps(float(sc["T"]), dt)
    window = tuple(float(v) for v in sc["window"])
    beta = setup.noise.spatial.beta
    results = []
    if sc["mode"] == "renewal":
        if setup.sigma.kind != "identity" or setup.noise.temporal.kind != "white":
            raise ConfigurationError("renewal scan needs sigma = identity and white time; use mode: mc")
        cov = build_space_cov(uniform_grid(setup.basis.M, dt, 1), setup.noise.spatial).matrix
        for xi in xis:
            r = renewal_second_moment(setup.basis, xi, beta, setup.u0, dt, K, (float(sc["x"]),), spatial_cov=cov)
            fit = lyapunov_fit(r.times, np.log(r.diagonal[:, 0]), window, log=True)
            results.append(fit)
    elif sc["mode"] == "mc":
        grid = uniform_grid(setup.basis.M, dt, K)
        t_all = grid.times[(grid.times >= window[0] - 1e-12) & (grid.times <= window[1] + 1e-12)]
        for i, xi in enumerate(xis):
            noise = NoiseSpec(xi, setup.noise.spatial, setup.noise.temporal)
            est = mc_moments(setup.basis, noise, setup.sigma, setup.u0, grid, (2,), t_all, [float(sc["x"])],
                             int(sc["replicates"]), int(cfg["seed"]) + i, workers=int(cfg["workers"]))
            results.append(lyapunov_fit(t_all, est.estimates[0, :, 0], window))
    else:
        raise ConfigurationError(f"unknown scan mode {sc['mode']!r}")
    slopes = [f.slope for f in results]
    bracket = _crossing(xis, slopes)
    lo, hi = bracket if bracket else (math.nan, math.nan)
    rows = [[_g(xi), _g(f.slope), _g(f.slope_ci), _g(f.r2), _g(lo), _g(hi), cfg["seed"], setup.hash]
            for xi, f in zip(xis, results)]
    _write_csv(out / "phase.csv", ["xi", "slope", "slope_ci", "r2", "crossing_lower", "crossing_upper", "seed",
                                   "config_hash"], rows)
    if plot:
        _write_plot(out / "plot" / "phase.dat", (xis, slopes))
    return {"crossing": list(bracket) if bracket else None,
            "finding": None if bracket else "no sign change of the slope in the scanned range"}


def cmd_fit_rho(setup: Setup, out: Path, plot: bool) -> dict:
    cfg = setup.cfg
    rc = cfg["rho"]
    if setup.noise.temporal.kind != "fbm":
        raise ConfigurationError("fit-rho needs an fbm temporal kernel (noise.temporal.kind: fbm)")
    if setup.sigma.kind != "identity":
        raise ConfigurationError("fit-rho needs sigma = identity")
    H = setup.noise.temporal.H
    alpha, beta = setup.basis.alpha, setup.noise.spatial.beta
    ts = np.geomspace(float(rc["t_min"]), float(rc["t_max"]), int(rc["n_t"]))
    n_max = int(rc["n_max"])
    res = [chaos_second_moment_fbm(setup.basis, setup.noise.xi, beta, H, setup.u0, float(t), float(rc["x"]),
                                   n_max=n_max, mc_samples=int(rc["mc_samples"]), seed=int(cfg["seed"]),
                                   h=rc["h"], pairing=rc["pairing"], kernel=rc["kernel"],
                                   workers=int(cfg["workers"])) for t in ts]
    ref = rho_exponent(alpha, beta, H)
    unit = (2.0 * H - 1.0) + (1.0 - beta / alpha)
    rows, fits = [], {}
    for n in range(1, n_max + 1):
        vals = np.array([r.terms[n].value for r in res])
        fit = rho_fit(ts, vals * np.exp(2.0 * setup.basis.mu1 * ts), log_moment=False)
        fits[n] = fit.rho_hat
        for t, r in zip(ts, res):
            term = r.terms[n]
            rows.append([n, _g(t), _g(term.value), _g(term.stderr), int(term.low_precision), _g(fit.rho_hat),
                         _g(fit.ci), _g(n * unit), _g(ref), cfg["seed"], setup.hash])
        if plot:
            _write_plot(out / "plot" / f"rho_n{n}.dat", (ts, vals))
    _write_csv(out / "rho.csv", ["n", "t", "value", "stderr", "low_precision", "fitted_exponent", "fitted_ci",
                                 "expected_exponent", "rho_exponent", "seed", "config_hash"], rows)
    flagged = sum(int(r.terms[n].low_precision) for r in res for n in range(1, n_max + 1))
    return {"fitted_exponents": fits, "rho_exponent": ref, "low_precision_terms": flagged}


def cmd_verify(setup: Setup, out: Path, plot: bool) -> dict:
    cfg = setup.cfg
    results = run_checks(setup.basis.alpha, setup.basis.N, setup.basis.M, setup.noise.spatial.beta,
                         corrupt=cfg["verify"]["corrupt_eigenvalue"])
    status = "PASS" if all(r.passed for r in results) else "FAIL"
    doc = {"status": status, "seed": cfg["seed"], "config_hash": setup.hash,
           "checks": [r.as_dict() for r in results]}
    (out / "verify.json").write_text(json.dumps(_jsonable(doc), indent=2, sort_keys=True) + "\n")
    return {"status": status, "failed": [r.check for r in results if not r.passed]}


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return float(_g(v)) if math.isfinite(v) else str(v)
    return obj


COMMANDS = {"simulate": cmd_simulate, "scan-xi": cmd_scan_xi, "fit-rho": cmd_fit_rho, "verify": cmd_verify}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fracshe", description=__doc__.split("\n\n")[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", "-c", help="YAML configuration file (defaults are used for missing keys)")
        p.add_argument("--seed", type=int, help="override the configured seed")
        p.add_argument("--out", help="override the output directory")
        p.add_argument("--emit-plot-data", action="store_true", help="also write two-column .dat files")
    return parser


def _fail(code: int, exc: Exception, out: Path | None) -> int:
    doc = {"error": type(exc).__name__, "message": str(exc), "exit_code": code}
    text = json.dumps(doc, sort_keys=True)
    print(text, file=sys.stderr)
    if out is not None:
        try:
            out.mkdir(parents=True, exist_ok=True)
            (out / "error.json").write_text(text + "\n")
        except OSError:
            pass
    return code


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    out = None
    try:
        cfg = load_config(args.config, args.seed, args.out)
        out = Path(cfg["outputs"])
        setup = build_setup(cfg)
        out.mkdir(parents=True, exist_ok=True)
        summary = COMMANDS[args.command](setup, out, args.emit_plot_data)
    except (ConfigurationError, DomainError) as exc:
        return _fail(EXIT_CONFIG, exc, out)
    except (CovarianceNotPSDError, QuadratureError, TruncationError, FitError, FloatingPointError) as exc:
        return _fail(EXIT_NUMERIC, exc, out)
    summary = {"command": args.command, "config_hash": setup.hash, "seed": cfg["seed"], **summary}
    print(json.dumps(_jsonable(summary), sort_keys=True))
    if args.command == "verify" and summary["status"] != "PASS":
        return EXIT_VERIFY
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
