import csv
import json
import math

import numpy as np
import pytest
import yaml

from fracshe.cli import DEFAULT_CONFIG, config_hash, load_config, main
from fracshe.exceptions import ConfigurationError
from fracshe.spectral import build_basis


def write_cfg(tmp_path, name="cfg.yaml", **cfg):
    path = tmp_path / name
    path.write_text(yaml.safe_dump(cfg))
    return str(path)


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


SMALL = dict(operator={"N": 16, "M": 64}, grids={"dt": 0.01, "T": 0.2, "x_points": [0.0, 0.5], "t_points": [0.1, 0.2]},
             replicates=200)


def test_merge_rejects_unknown_keys(tmp_path):
    with pytest.raises(ConfigurationError):
        load_config(write_cfg(tmp_path, grids={"dx": 1}))


def test_replaced_sections_do_not_merge(tmp_path):
    cfg = load_config(write_cfg(tmp_path, noise={"temporal": {"kind": "fbm", "H": 0.7}}))
    assert cfg["noise"]["temporal"] == {"kind": "fbm", "H": 0.7}
    assert cfg["noise"]["spatial"] == DEFAULT_CONFIG["noise"]["spatial"]


def test_hash_ignores_outputs_and_workers():
    a = load_config(None)
    b = load_config(None, out="elsewhere")
    b["workers"] = 4
    assert config_hash(a) == config_hash(b)
    assert config_hash(a) != config_hash(load_config(None, seed=1))


def test_simulate_zero_noise_exact(tmp_path):
    out = tmp_path / "o"
    cfg = write_cfg(tmp_path, noise={"xi": 0.0}, outputs=str(out), **SMALL)
    assert main(["simulate", "-c", cfg]) == 0
    rows = read_csv(out / "moments.csv")
    assert set(rows[0]) == {"t", "x", "p", "estimate", "ci_half", "n_diverged", "seed", "config_hash"}
    basis = build_basis(2.0, 16, 64)
    c = basis.coefficients(np.ones(64))
    for r in rows:
        g = basis.synthesize(c * basis.decay(float(r["t"])), np.array([float(r["x"])]))[0]
        assert float(r["estimate"]) == pytest.approx(g ** float(r["p"]), rel=1e-12)
        assert r["n_diverged"] == "0"


def test_simulate_rerun_byte_identical(tmp_path):
    cfg = write_cfg(tmp_path, **SMALL)
    assert main(["simulate", "-c", cfg, "--out", str(tmp_path / "a")]) == 0
    assert main(["simulate", "-c", cfg, "--out", str(tmp_path / "b"), "--emit-plot-data"]) == 0
    assert (tmp_path / "a/moments.csv").read_bytes() == (tmp_path / "b/moments.csv").read_bytes()
    assert list((tmp_path / "b/plot").glob("*.dat"))
    assert main(["simulate", "-c", cfg, "--out", str(tmp_path / "c"), "--seed", "5"]) == 0
    assert (tmp_path / "a/moments.csv").read_bytes() != (tmp_path / "c/moments.csv").read_bytes()


@pytest.mark.parametrize("bad", [
    {"replicates": 50},
    {"noise": {"spatial": {"kind": "riesz", "beta": 1.5}}},
    {"epsilon": 0.9},
    {"u0": {"kind": "constant", "value": -1.0}},
    {"sigma": {"kind": "cubic"}},
    {"grids": {"T": 0.0123}},
])
def test_config_errors_exit_2_with_json(tmp_path, capsys, bad):
    out = tmp_path / "o"
    cfg = write_cfg(tmp_path, outputs=str(out), **{**SMALL, **bad})
    assert main(["simulate", "-c", cfg]) == 2
    err = json.loads(capsys.readouterr().err.strip().splitlines()[-1])
    assert err["exit_code"] == 2 and err["error"]
    assert json.loads((out / "error.json").read_text()) == err


def test_simulate_refuses_fbm(tmp_path):
    cfg = write_cfg(tmp_path, noise={"temporal": {"kind": "fbm", "H": 0.75}}, outputs=str(tmp_path / "o"), **SMALL)
    assert main(["simulate", "-c", cfg]) == 2


def test_scan_xi_renewal(tmp_path):
    out = tmp_path / "o"
    cfg = write_cfg(tmp_path, operator={"N": 32, "M": 128}, scan={"dt": 0.005}, outputs=str(out))
    assert main(["scan-xi", "-c", cfg]) == 0
    rows = read_csv(out / "phase.csv")
    slopes = [float(r["slope"]) for r in rows]
    assert all(b > a for a, b in zip(slopes, slopes[1:]))
    assert slopes[0] == pytest.approx(-2 * math.pi ** 2 / 4, rel=0.05)
    lo, hi = float(rows[0]["crossing_lower"]), float(rows[0]["crossing_upper"])
    assert lo < hi


def test_scan_xi_no_crossing_is_finding(tmp_path, capsys):
    out = tmp_path / "o"
    cfg = write_cfg(tmp_path, operator={"N": 16, "M": 64}, noise={"xi_scan": [0.1, 0.2, 0.3, 0.4]},
                    scan={"dt": 0.01}, outputs=str(out))
    assert main(["scan-xi", "-c", cfg]) == 0
    summary = json.loads(capsys.readouterr().out)
    assert summary["crossing"] is None and "no sign change" in summary["finding"]
    assert all(math.isnan(float(r["crossing_lower"])) for r in read_csv(out / "phase.csv"))


def test_scan_xi_mc_mode(tmp_path):
    out = tmp_path / "o"
    cfg = write_cfg(tmp_path, operator={"N": 16, "M": 64}, noise={"xi_scan": [0.1, 1.0]},
                    scan={"mode": "mc", "dt": 0.01, "T": 0.5, "window": [0.2, 0.5], "replicates": 200},
                    outputs=str(out))
    assert main(["scan-xi", "-c", cfg]) == 0
    slopes = [float(r["slope"]) for r in read_csv(out / "phase.csv")]
    # strong noise is not used here: the MC second moment is dominated by rare paths there
    assert slopes[0] == pytest.approx(-2 * math.pi ** 2 / 4, rel=0.05)
    assert slopes[0] < slopes[1]


def test_scan_xi_renewal_needs_identity(tmp_path):
    cfg = write_cfg(tmp_path, sigma={"kind": "linear", "lam": 2.0}, outputs=str(tmp_path / "o"))
    assert main(["scan-xi", "-c", cfg]) == 2


def test_fit_rho_small(tmp_path):
    out = tmp_path / "o"
    cfg = write_cfg(tmp_path, noise={"temporal": {"kind": "fbm", "H": 0.75}},
                    rho={"n_max": 1, "mc_samples": 20000, "n_t": 4}, outputs=str(out))
    assert main(["fit-rho", "-c", cfg]) == 0
    rows = read_csv(out / "rho.csv")
    assert all(float(r["value"]) >= 0 for r in rows)
    assert all(float(r["rho_exponent"]) == 5 / 3 for r in rows)
    assert float(rows[0]["expected_exponent"]) == 1.25


def test_fit_rho_needs_fbm(tmp_path):
    assert main(["fit-rho", "--out", str(tmp_path / "o")]) == 2


def test_verify_pass_and_corrupted(tmp_path):
    assert main(["verify", "--out", str(tmp_path / "a")]) == 0
    doc = json.loads((tmp_path / "a/verify.json").read_text())
    assert doc["status"] == "PASS"
    assert all({"check", "status", "worst_case_margin"} <= set(c) for c in doc["checks"])
    cfg = write_cfg(tmp_path, verify={"corrupt_eigenvalue": {"index": 1, "factor": 1.05}},
                    outputs=str(tmp_path / "b"))
    assert main(["verify", "-c", cfg]) == 3
    bad = json.loads((tmp_path / "b/verify.json").read_text())
    ck = next(c for c in bad["checks"] if c["check"] == "chapman-kolmogorov")
    assert ck["status"] == "FAIL"


def test_missing_config_file(tmp_path):
    assert main(["verify", "-c", str(tmp_path / "nope.yaml")]) == 2


def test_version(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["--version"])
    assert exc.value.code == 0 and "fracshe" in capsys.readouterr().out
