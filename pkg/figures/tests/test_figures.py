"""Figure-rendering tests, including the acceptance check that all four
figure kinds render from completed runs without touching the analysis
package.

The fixture prepares real runs by invoking the analysis CLI as a separate
process (setup only); rendering itself must work from the serialized files
alone.
"""

import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

matplotlib = pytest.importorskip("matplotlib")

OSC_CONFIG = """
case: custom
grid:
  dims:
    - {n: 256, length: 1.0}
sde:
  terms:
    - {orders: [2], coeff: 0.0003}
    - {orders: [1], coeff: 0.001}
    - {orders: [0], coeff: 0.5}
  noise_spectrum: 1.0
noise_sigma: 8.0
mask:
  boxes:
    - [[-0.35, -0.2]]
    - [[0.2, 0.3]]
seeds: {field: 101, noise: 202, mask: 303}
hyper: {sigma: 2.0, mu: 2.0, nu: 1.5707963267948966, eta: 0.1,
        epsilon: 1.0e-3, backend: finite_difference}
fit: {mode: marginal, max_iters: 120, grad_tol: null, dense_cap: 4096, probes: 64}
"""

WAVE_CONFIG = """
case: custom
grid:
  dims:
    - {n: 32, length: 1.0}
    - {n: 32, length: 1.0}
sde:
  terms:
    - {orders: [2, 0], coeff: 0.00007}
    - {orders: [0, 2], coeff: -0.0002}
    - {orders: [0, 1], coeff: -0.0014}
    - {orders: [1, 0], coeff: -0.0012}
    - {orders: [0, 0], coeff: 0.1}
  noise_spectrum: 1.0
noise_sigma: 7.0
mask:
  boxes:
    - [[0.3, 0.5], null]
    - [[-0.2, -0.05], [-0.3, -0.1]]
seeds: {field: 404, noise: 505, mask: 606}
hyper: {sigma: 2.5, mu: 2.5, nu: 1.5707963267948966, eta: 0.1,
        epsilon: 1.0e-3, backend: finite_difference}
fit: {mode: marginal, max_iters: 100, grad_tol: null, dense_cap: 4096, probes: 64}
"""


def run_pipeline(root, config_text, tag):
    cfg = root / f"{tag}.yaml"
    cfg.write_text(config_text)
    bundle = root / tag / "bundle"
    fit = root / tag / "fit"
    recon = root / tag / "recon"
    for args in (
        ["synth", "--config", str(cfg), "--out", str(bundle)],
        ["fit", "--bundle", str(bundle), "--mode", "marginal", "--out", str(fit)],
        ["reconstruct", "--bundle", str(bundle), "--fit", str(fit),
         "--out", str(recon)],
    ):
        r = subprocess.run([sys.executable, "-m", "specfield.cli", *args],
                           capture_output=True, text=True)
        assert r.returncode == 0, r.stderr
    return bundle, fit, recon


@pytest.fixture(scope="session")
def osc_run(tmp_path_factory):
    return run_pipeline(tmp_path_factory.mktemp("osc"), OSC_CONFIG, "osc")


@pytest.fixture(scope="session")
def wave_run(tmp_path_factory):
    return run_pipeline(tmp_path_factory.mktemp("wave"), WAVE_CONFIG, "wave")


def test_renderers_do_not_import_analysis_package():
    import specfield_figures.heatmap_quad
    import specfield_figures.runfiles
    import specfield_figures.slices
    import specfield_figures.spectrum_loglog
    import specfield_figures.timeseries_panels  # noqa: F401

    assert not any(m == "specfield" or m.startswith("specfield.")
                   for m in sys.modules)


def test_timeseries_panels(osc_run, tmp_path):
    from specfield_figures.timeseries_panels import render

    bundle, fit, recon = osc_run
    out = tmp_path / "panels.png"
    fig = render(bundle, recon, out)
    assert out.stat().st_size > 5000
    assert len(fig.axes) == 3  # data / signal / reconstruction


def test_spectrum_loglog(osc_run, tmp_path):
    from specfield_figures.spectrum_loglog import render

    bundle, fit, recon = osc_run
    out = tmp_path / "spectrum.png"
    fig = render(bundle, fit, out)
    assert out.stat().st_size > 5000
    ax = fig.axes[0]
    assert ax.get_xscale() == "log" and ax.get_yscale() == "log"
    labels = {line.get_label() for line in ax.get_lines()}
    assert {"true spectrum", "sample spectrum", "MAP",
            "smooth component"} <= labels
    assert len(ax.collections) >= 1  # the one-sigma band


def test_heatmap_quad_field(wave_run, tmp_path):
    from specfield_figures.heatmap_quad import render

    bundle, fit, recon = wave_run
    out = tmp_path / "quad.png"
    fig = render(bundle, out, kind="field", recon_dir=recon)
    assert out.stat().st_size > 5000
    titles = {ax.get_title() for ax in fig.axes if ax.get_title()}
    assert {"signal", "data", "reconstruction", "uncertainty"} <= titles


def test_heatmap_quad_spectrum(wave_run, tmp_path):
    from specfield_figures.heatmap_quad import render

    bundle, fit, recon = wave_run
    out = tmp_path / "quad_spec.png"
    fig = render(bundle, out, kind="spectrum", fit_dir=fit)
    assert out.stat().st_size > 5000
    titles = {ax.get_title() for ax in fig.axes if ax.get_title()}
    assert {"log true spectrum", "log data power",
            "reconstructed log-spectrum", "one sigma"} <= titles


def test_slices(wave_run, tmp_path):
    from specfield_figures.slices import render

    bundle, fit, recon = wave_run
    out = tmp_path / "slices.png"
    fig = render(bundle, recon, out)
    assert out.stat().st_size > 5000
    assert len(fig.axes) == 4


def test_cli_entry_points(osc_run, tmp_path):
    bundle, fit, recon = osc_run
    out = tmp_path / "cli_panels.png"
    r = subprocess.run(
        [sys.executable, "-m", "specfield_figures.timeseries_panels",
         "--run", str(bundle), "--recon", str(recon), "--out", str(out)],
        capture_output=True, text=True,
    )
    assert r.returncode == 0, r.stderr
    assert out.exists() and out.stat().st_size > 0


def test_acceptance_criterion_10(osc_run, wave_run, tmp_path):
    """All four figure kinds render from completed runs; the analysis
    package is never imported into this process."""
    from specfield_figures.heatmap_quad import render as quad
    from specfield_figures.slices import render as slices
    from specfield_figures.spectrum_loglog import render as spectrum
    from specfield_figures.timeseries_panels import render as panels

    osc_bundle, osc_fit, osc_recon = osc_run
    wave_bundle, wave_fit, wave_recon = wave_run
    outputs = {
        "timeseries": panels(osc_bundle, osc_recon, tmp_path / "a.png"),
        "spectrum": spectrum(osc_bundle, osc_fit, tmp_path / "b.png"),
        "heatmap_field": quad(wave_bundle, tmp_path / "c.png",
                              kind="field", recon_dir=wave_recon),
        "heatmap_spectrum": quad(wave_bundle, tmp_path / "d.png",
                                 kind="spectrum", fit_dir=wave_fit),
        "slices": slices(wave_bundle, wave_recon, tmp_path / "e.png"),
    }
    sizes = {name: (tmp_path / f"{chr(97+i)}.png").stat().st_size
             for i, name in enumerate(outputs)}
    no_primary = not any(m == "specfield" or m.startswith("specfield.")
                         for m in sys.modules)
    panel_counts = {name: len(fig.axes) for name, fig in outputs.items()}
    ok = all(s > 5000 for s in sizes.values()) and no_primary \
        and panel_counts["timeseries"] == 3 and panel_counts["slices"] == 4
    print(f"\nACCEPTANCE 10: {'PASS' if ok else 'FAIL'} - rendered "
          f"{len(outputs)} figures, sizes {sizes}, primary package imported: "
          f"{not no_primary}")
    assert ok
