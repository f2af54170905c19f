"""Serialization of fields and plain arrays.

Two formats, both bit-stable across runs:

* binary: raw little-endian float64 (`*.f64`) plus a JSON sidecar
  (`*.json`) carrying shape, axis lengths, origin, dtype and endianness;
* CSV: one integer index column per axis plus a `value` column, 17
  significant digits so float64 round-trips losslessly.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path

import numpy as np

from .grid import Field, RegularGrid, make_grid

__all__ = [
    "write_array_binary",
    "read_array_binary",
    "write_field_binary",
    "read_field_binary",
    "write_field_csv",
    "read_field_csv",
    "write_csv_table",
    "file_sha256",
]


def _sidecar_path(path: Path) -> Path:
    return path.with_suffix(".json")


def write_array_binary(values: np.ndarray, path, meta: dict | None = None) -> None:
    """Write a float64 array as raw little-endian binary + JSON sidecar."""
    path = Path(path)
    arr = np.ascontiguousarray(values, dtype="<f8")
    path.write_bytes(arr.tobytes())
    sidecar = {
        "shape": list(arr.shape),
        "dtype": "float64",
        "endianness": "little",
    }
    if meta:
        sidecar.update(meta)
    _sidecar_path(path).write_text(json.dumps(sidecar, sort_keys=True, indent=1))


def read_array_binary(path) -> tuple[np.ndarray, dict]:
    path = Path(path)
    meta = json.loads(_sidecar_path(path).read_text())
    if meta.get("dtype") != "float64" or meta.get("endianness") != "little":
        raise ValueError(f"unsupported binary format in {path}")
    arr = np.frombuffer(path.read_bytes(), dtype="<f8").reshape(meta["shape"])
    return arr.astype(np.float64), meta


def _grid_meta(grid: RegularGrid) -> dict:
    return {
        "lengths": list(grid.lengths),
        "origin": [-0.5 * length for length in grid.lengths],
    }


def write_field_binary(field_values: np.ndarray, grid: RegularGrid, path,
                       space: str = "real") -> None:
    """Write grid-shaped values (real-space field or real function of modes).

    `space` is "real" for cell samples or "harmonic" for real-valued
    per-mode arrays (log-spectra, uncertainties) in FFT storage order.
    """
    meta = _grid_meta(grid)
    meta["space"] = space
    write_array_binary(np.asarray(field_values), path, meta)


def read_field_binary(path) -> tuple[np.ndarray, RegularGrid, dict]:
    arr, meta = read_array_binary(path)
    grid = make_grid(list(zip(meta["shape"], meta["lengths"])))
    return arr, grid, meta


def write_field_csv(field: Field, path) -> None:
    write_csv_table(field.values, path)


def write_csv_table(values: np.ndarray, path) -> None:
    values = np.asarray(values)
    path = Path(path)
    idx = np.indices(values.shape).reshape(values.ndim, -1)
    header = ",".join(f"i{d}" for d in range(values.ndim)) + ",value"
    lines = [header]
    flat = values.reshape(-1)
    for j in range(flat.size):
        pos = ",".join(str(idx[d, j]) for d in range(values.ndim))
        lines.append(f"{pos},{flat[j]:.17g}")
    path.write_text("\n".join(lines) + "\n")


def read_field_csv(path) -> np.ndarray:
    path = Path(path)
    rows = path.read_text().strip().splitlines()
    ncols = len(rows[0].split(","))
    ndim = ncols - 1
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    shape = tuple(int(data[:, d].max()) + 1 for d in range(ndim))
    out = np.empty(shape, dtype=np.float64)
    out[tuple(data[:, d].astype(int) for d in range(ndim))] = data[:, ndim]
    return out


def file_sha256(path) -> str:
    h = hashlib.sha256()
    h.update(Path(path).read_bytes())
    return h.hexdigest()
