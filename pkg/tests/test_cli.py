import json
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest
import yaml

from specfield.fieldio import read_field_binary

# a small, fast configuration for end-to-end CLI runs
SMALL_CONFIG = {
    "case": "custom",
    "grid": {"dims": [{"n": 64, "length": 1.0}]},
    "sde": {"terms": [{"orders": [2], "coeff": 0.0003},
                      {"orders": [1], "coeff": 0.001},
                      {"orders": [0], "coeff": 0.5}],
            "noise_spectrum": 1.0},
    "noise_sigma": 4.0,
    "mask": {"boxes": [[[-0.30, -0.15]], [[0.20, 0.30]]]},
    "seeds": {"field": 11, "noise": 22, "mask": 33},
    "hyper": {"sigma": 2.0, "mu": 2.0, "nu": 1.5707963267948966,
              "eta": 0.1, "epsilon": 1.0e-3, "backend": "finite_difference"},
    "fit": {"mode": "marginal", "max_iters": 150, "grad_tol": None,
            "dense_cap": 4096, "probes": 64},
}


def run_cli(*args):
    return subprocess.run(
        [sys.executable, "-m", "specfield.cli", *args],
        capture_output=True, text=True,
    )


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    cfg = root / "exp.yaml"
    cfg.write_text(yaml.safe_dump(SMALL_CONFIG))
    return root, cfg


@pytest.fixture(scope="module")
def synth_run(workspace):
    root, cfg = workspace
    out = root / "bundle"
    r = run_cli("synth", "--config", str(cfg), "--out", str(out))
    assert r.returncode == 0, r.stderr
    return out


@pytest.fixture(scope="module")
def fit_run(workspace, synth_run):
    root, _ = workspace
    out = root / "fit"
    r = run_cli("fit", "--bundle", str(synth_run), "--mode", "marginal",
                "--out", str(out))
    assert r.returncode == 0, r.stderr
    return out


def test_synth_writes_contracted_files(synth_run):
    names = {p.name for p in synth_run.iterdir()}
    assert {"phi.f64", "d.f64", "mask.f64", "truth_spectrum.f64",
            "config.json", "manifest.json"} <= names
    manifest = json.loads((synth_run / "manifest.json").read_text())
    assert manifest["stage"] == "synth"
    for name, digest in manifest["outputs"].items():
        assert len(digest) == 64


def test_synth_rerun_identical_hashes(workspace, synth_run):
    root, cfg = workspace
    out2 = root / "bundle2"
    r = run_cli("synth", "--config", str(cfg), "--out", str(out2))
    assert r.returncode == 0
    m1 = json.loads((synth_run / "manifest.json").read_text())["outputs"]
    m2 = json.loads((out2 / "manifest.json").read_text())["outputs"]
    assert m1 == m2


def test_synth_invalid_case_exits_2(workspace):
    root, _ = workspace
    r = run_cli("synth", "--case", "not_a_case", "--out", str(root / "x"))
    assert r.returncode == 2


def test_synth_missing_config_exits_2(workspace):
    root, _ = workspace
    r = run_cli("synth", "--config", str(root / "missing.yaml"),
                "--out", str(root / "x"))
    assert r.returncode == 2


def test_fit_outputs(fit_run):
    names = {p.name for p in fit_run.iterdir()}
    assert {"tau_bar.f64", "delta_bar.f64", "log_power.f64", "sqrt_O.f64",
            "hamiltonian_trace.csv", "manifest.json"} <= names
    manifest = json.loads((fit_run / "manifest.json").read_text())
    conv = manifest["convergence"]
    assert set(conv) >= {"converged", "iterations", "final_hamiltonian",
                         "grad_inf_norm"}
    trace = np.loadtxt(fit_run / "hamiltonian_trace.csv", delimiter=",",
                       skiprows=1, ndmin=2)[:, 1]
    assert np.all(np.diff(trace) <= 1e-9 * np.maximum(1.0, np.abs(trace[:-1])))


def test_fit_missing_bundle_exits_2(workspace):
    root, _ = workspace
    r = run_cli("fit", "--bundle", str(root / "nope"), "--out", str(root / "y"))
    assert r.returncode == 2


def test_reconstruct_outputs(workspace, synth_run, fit_run):
    root, _ = workspace
    out = root / "recon"
    r = run_cli("reconstruct", "--bundle", str(synth_run), "--fit", str(fit_run),
                "--out", str(out))
    assert r.returncode == 0, r.stderr
    mean, grid, _ = read_field_binary(out / "mean.f64")
    unc, _, _ = read_field_binary(out / "uncertainty.f64")
    assert mean.shape == (64,)
    assert np.all(unc >= 0.0)
    # masked cells are less constrained than observed ones
    mask, _, _ = read_field_binary(synth_run / "mask.f64")
    observed = mask > 0.5
    assert np.median(unc[~observed]) > np.median(unc[observed])


def test_reconstruct_rerun_hash_stable(workspace, synth_run, fit_run):
    root, _ = workspace
    outs = []
    for name in ("r1", "r2"):
        out = root / name
        r = run_cli("reconstruct", "--bundle", str(synth_run),
                    "--fit", str(fit_run), "--out", str(out))
        assert r.returncode == 0
        outs.append(json.loads((out / "manifest.json").read_text())["outputs"])
    assert outs[0] == outs[1]


def test_slice_2d_field(workspace, tmp_path):
    from specfield.fieldio import write_field_binary
    from specfield.grid import make_grid

    g = make_grid([(8, 1.0), (6, 2.0)])
    vals = np.arange(48, dtype=float).reshape(8, 6)
    field_path = tmp_path / "f.f64"
    write_field_binary(vals, g, field_path)
    out = tmp_path / "slice.csv"
    r = run_cli("slice", "--field", str(field_path), "--axis", "0",
                "--index", "3", "--out", str(out))
    assert r.returncode == 0, r.stderr
    rows = out.read_text().strip().splitlines()
    assert rows[0] == "coordinate,value"
    assert len(rows) == 7  # header + n_x
    got = np.array([float(line.split(",")[1]) for line in rows[1:]])
    assert np.array_equal(got, vals[3, :])


def test_slice_1d_returns_field(synth_run, tmp_path):
    out = tmp_path / "s.csv"
    r = run_cli("slice", "--field", str(synth_run / "phi.f64"), "--axis", "0",
                "--index", "0", "--out", str(out))
    assert r.returncode == 0
    vals, _, _ = read_field_binary(synth_run / "phi.f64")
    rows = out.read_text().strip().splitlines()
    assert len(rows) == 1 + vals.size


def test_slice_out_of_range_exits_2(workspace, tmp_path):
    from specfield.fieldio import write_field_binary
    from specfield.grid import make_grid

    g = make_grid([(8, 1.0), (6, 2.0)])
    field_path = tmp_path / "g.f64"
    write_field_binary(np.zeros((8, 6)), g, field_path)
    r = run_cli("slice", "--field", str(field_path), "--axis", "0",
                "--index", "99", "--out", str(tmp_path / "o.csv"))
    assert r.returncode == 2


def test_spectrum_dump(workspace, synth_run, fit_run, tmp_path):
    out = tmp_path / "spec.csv"
    r = run_cli("spectrum-dump", "--run", str(synth_run), "--fit", str(fit_run),
                "--out", str(out))
    assert r.returncode == 0, r.stderr
    header = out.read_text().splitlines()[0].split(",")
    assert {"truth", "periodogram", "tau", "delta", "log_power",
            "sqrt_O"} <= set(header)


def test_fit_perfect_mode(workspace, synth_run):
    root, _ = workspace
    out = root / "fit_perfect"
    r = run_cli("fit", "--bundle", str(synth_run), "--mode", "perfect",
                "--out", str(out))
    assert r.returncode == 0, r.stderr
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["mode"] == "perfect"
    assert (out / "sqrt_O.f64").exists()


def test_fit_fourier_backend(workspace, synth_run):
    root, _ = workspace
    out = root / "fit_fourier"
    r = run_cli("fit", "--bundle", str(synth_run), "--mode", "perfect",
                "--backend", "fourier", "--out", str(out), "--max-iters", "30")
    assert r.returncode == 0, r.stderr
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["config"]["hyper"]["backend"] == "fourier"
