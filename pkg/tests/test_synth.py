import numpy as np
import pytest

from specfield.grid import k_coords, make_grid
from specfield.inference import normalized_periodogram
from specfield.synth import (
    ExperimentConfig,
    add_noise,
    generate,
    make_mask,
    preset_config,
    sample_field,
)


def test_sample_field_deterministic():
    g = make_grid((64, 1.0))
    p = np.exp(-0.1 * np.abs(k_coords(g).axis(0)))
    a = sample_field(g, p, seed=42)
    b = sample_field(g, p, seed=42)
    assert np.array_equal(a.values, b.values)
    c = sample_field(g, p, seed=43)
    assert not np.array_equal(a.values, c.values)


def test_sample_field_tiny_power():
    g = make_grid((32, 1.0))
    f = sample_field(g, np.full(g.shape, 1e-30), seed=1)
    assert np.max(np.abs(f.values)) < 1e-10


def test_sample_field_real_output():
    # construction is exactly Hermitian; the imaginary residue discarded by
    # the inverse transform is at rounding level
    g = make_grid([(16, 1.0), (16, 1.0)])
    p = 1.0 / (1.0 + k_coords(g).radius() ** 2)
    f = sample_field(g, p, seed=3)
    assert f.values.dtype == np.float64
    assert np.all(np.isfinite(f.values))


def test_sample_field_rejects_bad_power():
    g = make_grid((16, 1.0))
    with pytest.raises(ValueError):
        sample_field(g, np.zeros(16), seed=0)


def test_sample_field_periodogram_statistics():
    # Monte-Carlo oracle: the mean periodogram over many draws approaches
    # the target spectrum within a few standard errors almost everywhere
    g = make_grid((64, 1.0))
    kc = k_coords(g)
    p = 4.0 / (1.0 + (kc.axis(0) / 20.0) ** 2)
    n_draws = 500
    acc = np.zeros(g.shape)
    for s in range(n_draws):
        acc += normalized_periodogram(sample_field(g, p, seed=1000 + s))
    acc /= n_draws
    band = 3.0 * p / np.sqrt(n_draws) * 1.5  # small-sample slack
    assert np.mean(np.abs(acc - p) <= band) >= 0.95


def test_single_sample_periodogram_scatter():
    # log-ratio of a single periodogram to truth has median below 1.5
    g = make_grid((1024, 1.0))
    p = np.exp(2.0 - 0.002 * np.abs(k_coords(g).axis(0)))
    f = sample_field(g, p, seed=9)
    ratio = normalized_periodogram(f) / p
    assert np.median(np.abs(np.log(ratio))) < 1.5


def test_make_mask_empty_spec_is_identity():
    g = make_grid((16, 1.0))
    op = make_mask(g, None)
    assert op.n_observed == 16


def test_make_mask_single_cell():
    g = make_grid((16, 1.0))
    # keep exactly one cell: mask everything except [x0, x0+dx)
    dx = g.spacings[0]
    op = make_mask(g, {"boxes": [[[-0.5 + dx, 0.5]]]})
    assert op.n_observed == 1


def test_make_mask_fraction_counting():
    g = make_grid((64, 1.0))
    op = make_mask(g, {"fraction": 0.3}, seed=5)
    assert g.n_cells - op.n_observed == int(np.floor(0.3 * 64))
    op2 = make_mask(g, {"fraction": 0.3}, seed=5)
    assert np.array_equal(op.keep, op2.keep)


def test_make_mask_rejects_everything_masked():
    g = make_grid((8, 1.0))
    with pytest.raises(ValueError):
        make_mask(g, {"boxes": [[[-1.0, 1.0]]]})


def test_make_mask_2d_boxes():
    g = make_grid([(16, 1.0), (16, 1.0)])
    op = make_mask(g, {"boxes": [[[0.3, 0.5], None]]})
    keep = op.keep
    t = g.coords(0)
    masked_rows = (t >= 0.3) & (t < 0.5)
    assert np.all(~keep[masked_rows, :])
    assert np.all(keep[~masked_rows, :])


def test_add_noise_zero_sigma():
    clean = np.arange(5, dtype=float)
    assert np.array_equal(add_noise(clean, 0.0, seed=1), clean)


def test_add_noise_statistics():
    clean = np.zeros(100_000)
    noisy = add_noise(clean, 3.0, seed=7)
    assert abs(np.var(noisy) - 9.0) / 9.0 < 0.02


def test_add_noise_deterministic():
    clean = np.ones(64)
    assert np.array_equal(add_noise(clean, 2.0, seed=3), add_noise(clean, 2.0, seed=3))


def test_generate_oscillator_preset():
    cfg = preset_config("oscillator1d")
    bundle = generate(cfg)
    assert bundle.truth_spectrum.reshape(-1)[0] == pytest.approx(4.0)
    assert bundle.d.shape == (bundle.R.n_observed,)
    assert bundle.phi.grid.shape == (1024,)
    # three gaps totалing about a third of the axis
    masked_frac = 1.0 - bundle.R.n_observed / bundle.phi.grid.n_cells
    assert 0.25 < masked_frac < 0.45


def test_generate_wave2d_preset():
    cfg = preset_config("wave2d")
    cfg.dims = [(32, 1.0), (32, 1.0)]
    bundle = generate(cfg)
    g = bundle.phi.grid
    assert g.shape == (32, 32)
    # truth from |f|^2 of the wave operator
    kc = k_coords(g)
    omega, k = kc.grids()
    f = -0.00007 * omega**2 + 0.0002 * k**2 + 0.1 \
        - 1j * (0.0014 * k + 0.0012 * omega)
    expected = 1.0 / np.abs(f) ** 2
    assert np.allclose(bundle.truth_spectrum, expected, rtol=1e-12)


def test_generate_structured_preset():
    cfg = preset_config("structured2d")
    cfg.dims = [(32, 1.0), (32, 1.0)]
    bundle = generate(cfg)
    kc = k_coords(bundle.phi.grid)
    omega, k = kc.grids()
    expected = 2.0 / ((1.1 - np.sin(0.0025 * k**2 - 0.0011 * omega**2)) ** 2
                      + (0.002 * k + 0.004 * omega) ** 2)
    assert np.allclose(bundle.truth_spectrum, expected, rtol=1e-12)


def test_generate_determinism():
    cfg = preset_config("oscillator1d")
    b1 = generate(cfg)
    b2 = generate(cfg)
    assert np.array_equal(b1.phi.values, b2.phi.values)
    assert np.array_equal(b1.d, b2.d)
    assert np.array_equal(b1.R.keep, b2.R.keep)


def test_config_round_trip():
    cfg = preset_config("wave2d")
    back = ExperimentConfig.from_dict(cfg.to_dict())
    assert back.to_dict() == cfg.to_dict()


def test_bundle_save_load(tmp_path):
    from specfield.synth import load_bundle, save_bundle

    cfg = preset_config("oscillator1d")
    cfg.dims = [(64, 1.0)]
    bundle = generate(cfg)
    hashes = save_bundle(bundle, tmp_path)
    assert set(hashes) >= {"phi.f64", "d.f64", "mask.f64", "truth_spectrum.f64",
                           "config.json"}
    back = load_bundle(tmp_path)
    assert np.array_equal(back.phi.values, bundle.phi.values)
    assert np.array_equal(back.d, bundle.d)
    assert np.array_equal(back.R.keep, bundle.R.keep)
    assert np.array_equal(back.truth_spectrum, bundle.truth_spectrum)
