"""Readers for the serialized run formats (binary field files + sidecars)."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np


def read_array(path):
    """Raw little-endian float64 array + its JSON sidecar."""
    path = Path(path)
    meta = json.loads(path.with_suffix(".json").read_text())
    if meta.get("dtype") != "float64" or meta.get("endianness") != "little":
        raise ValueError(f"unsupported binary format: {path}")
    arr = np.frombuffer(path.read_bytes(), dtype="<f8").reshape(meta["shape"])
    return arr.astype(np.float64), meta


def axis_coords(meta, axis):
    """Centered physical coordinates of one axis from sidecar metadata."""
    n = meta["shape"][axis]
    length = meta["lengths"][axis]
    origin = meta.get("origin", [-0.5 * el for el in meta["lengths"]])[axis]
    return origin + (length / n) * np.arange(n)


def mode_coords(meta, axis):
    """Signed harmonic coordinates (FFT order) of one axis."""
    n = meta["shape"][axis]
    length = meta["lengths"][axis]
    return 2.0 * np.pi * np.fft.fftfreq(n, d=length / n)


def periodogram(values, meta):
    """|F(k)|^2 / total_volume with the continuum-consistent transform
    scaling (forward transform carries the cell volume)."""
    shape = meta["shape"]
    lengths = meta["lengths"]
    cell = np.prod([el / n for el, n in zip(lengths, shape)])
    total = float(np.prod(lengths))
    coeff = np.fft.fftn(values) * cell
    return (np.abs(coeff) ** 2) / total


def load_bundle_files(run_dir):
    run = Path(run_dir)
    phi, meta = read_array(run / "phi.f64")
    mask, _ = read_array(run / "mask.f64")
    d, _ = read_array(run / "d.f64")
    truth, _ = read_array(run / "truth_spectrum.f64")
    return {"phi": phi, "mask": mask > 0.5, "d": d, "truth": truth,
            "meta": meta}


def data_on_grid(bundle):
    """Place the compressed data vector back on the grid; masked cells NaN."""
    mask = bundle["mask"]
    out = np.full(mask.shape, np.nan)
    out[mask] = bundle["d"]
    return out


def load_fit_files(fit_dir):
    fit = Path(fit_dir)
    out = {}
    for key, name in (("tau", "tau_bar.f64"), ("delta", "delta_bar.f64"),
                      ("log_power", "log_power.f64"), ("sqrt_o", "sqrt_O.f64")):
        out[key], meta = read_array(fit / name)
        out["meta"] = meta
    return out


def load_recon_files(recon_dir):
    rec = Path(recon_dir)
    mean, meta = read_array(rec / "mean.f64")
    unc, _ = read_array(rec / "uncertainty.f64")
    return {"mean": mean, "uncertainty": unc, "meta": meta}


def one_sided(values, meta):
    """Fold a 1D mode-lattice array to the positive half axis (drop the zero
    mode); returns (|k| sorted ascending, values at those modes)."""
    k = mode_coords(meta, 0)
    pos = k > 0
    vals = np.asarray(values).reshape(-1)
    order = np.argsort(k[pos])
    return k[pos][order], vals[pos][order]
