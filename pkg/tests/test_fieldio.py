import json

import numpy as np

from specfield.fieldio import (
    file_sha256,
    read_array_binary,
    read_field_binary,
    read_field_csv,
    write_array_binary,
    write_field_binary,
    write_field_csv,
)
from specfield.grid import Field, make_grid


def test_binary_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    vals = rng.standard_normal((8, 6))
    path = tmp_path / "a.f64"
    write_array_binary(vals, path)
    back, meta = read_array_binary(path)
    assert np.array_equal(back, vals)
    assert meta["shape"] == [8, 6]
    assert meta["endianness"] == "little"


def test_field_binary_carries_grid(tmp_path):
    g = make_grid([(8, 2.0), (6, 1.5)])
    vals = np.arange(48, dtype=float).reshape(8, 6)
    path = tmp_path / "f.f64"
    write_field_binary(vals, g, path, space="real")
    back, grid, meta = read_field_binary(path)
    assert np.array_equal(back, vals)
    assert grid == g
    assert meta["space"] == "real"
    assert meta["origin"] == [-1.0, -0.75]


def test_binary_bit_stable(tmp_path):
    vals = np.random.default_rng(1).standard_normal(64)
    p1, p2 = tmp_path / "x.f64", tmp_path / "y.f64"
    write_array_binary(vals, p1)
    write_array_binary(vals, p2)
    assert file_sha256(p1) == file_sha256(p2)
    assert (tmp_path / "x.json").read_text() == (tmp_path / "y.json").read_text()


def test_csv_round_trip_lossless(tmp_path):
    g = make_grid([(6, 1.0), (4, 1.0)])
    vals = np.random.default_rng(2).standard_normal(g.shape) * 1e-7
    f = Field(g, vals)
    path = tmp_path / "f.csv"
    write_field_csv(f, path)
    back = read_field_csv(path)
    assert np.array_equal(back, vals)  # 17 significant digits round-trip


def test_sidecar_is_json(tmp_path):
    path = tmp_path / "z.f64"
    write_array_binary(np.zeros(4), path, {"kind": "data_vector"})
    meta = json.loads((tmp_path / "z.json").read_text())
    assert meta["kind"] == "data_vector"
    assert meta["dtype"] == "float64"
