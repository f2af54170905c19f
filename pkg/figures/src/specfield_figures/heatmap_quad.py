"""Four-panel heatmaps for 2D runs.

kind "field": signal, data (masked cells blank), reconstruction mean,
uncertainty map.  kind "spectrum": log true spectrum, log data periodogram,
reconstructed log-spectrum, its one-sigma map; spectra are shown on signed
axes (fftshift).
"""

from __future__ import annotations

import argparse

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from .runfiles import (
    axis_coords,
    data_on_grid,
    load_bundle_files,
    load_fit_files,
    load_recon_files,
    mode_coords,
    periodogram,
)


def _imshow(ax, values, extent, title, cmap="viridis"):
    im = ax.imshow(values.T, origin="lower", aspect="auto",
                   extent=extent, cmap=cmap, interpolation="nearest")
    ax.set_title(title, fontsize=9)
    plt.colorbar(im, ax=ax, shrink=0.85)


def render(run_dir, out_path, kind="field", fit_dir=None, recon_dir=None):
    bundle = load_bundle_files(run_dir)
    meta = bundle["meta"]
    fig, axes = plt.subplots(2, 2, figsize=(10, 8))

    if kind == "field":
        if recon_dir is None:
            raise ValueError("field quad needs --recon")
        recon = load_recon_files(recon_dir)
        t = axis_coords(meta, 0)
        x = axis_coords(meta, 1)
        extent = (t[0], t[-1], x[0], x[-1])
        _imshow(axes[0, 0], bundle["phi"], extent, "signal")
        _imshow(axes[1, 0], data_on_grid(bundle), extent, "data")
        _imshow(axes[0, 1], recon["mean"], extent, "reconstruction")
        _imshow(axes[1, 1], recon["uncertainty"], extent, "uncertainty",
                cmap="magma")
        for ax in axes.ravel():
            ax.set_xlabel("t")
            ax.set_ylabel("x")
    elif kind == "spectrum":
        if fit_dir is None:
            raise ValueError("spectrum quad needs --fit")
        fit = load_fit_files(fit_dir)
        w = np.fft.fftshift(mode_coords(meta, 0))
        k = np.fft.fftshift(mode_coords(meta, 1))
        extent = (w[0], w[-1], k[0], k[-1])
        shift = np.fft.fftshift
        pgram = periodogram(np.nan_to_num(data_on_grid(bundle)), meta)
        with np.errstate(divide="ignore"):
            _imshow(axes[0, 0], shift(np.log(bundle["truth"])), extent,
                    "log true spectrum")
            _imshow(axes[1, 0], shift(np.log(np.maximum(pgram, 1e-300))),
                    extent, "log data power")
        _imshow(axes[0, 1], shift(fit["log_power"]), extent,
                "reconstructed log-spectrum")
        _imshow(axes[1, 1], shift(fit["sqrt_o"]), extent, "one sigma",
                cmap="magma")
        for ax in axes.ravel():
            ax.set_xlabel("omega")
            ax.set_ylabel("k")
    else:
        raise ValueError(f"unknown quad kind {kind!r}")

    fig.tight_layout()
    fig.savefig(out_path, dpi=150)
    return fig


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description="2x2 heatmap panels")
    ap.add_argument("--run", required=True, help="synth bundle directory")
    ap.add_argument("--kind", choices=("field", "spectrum"), default="field")
    ap.add_argument("--fit", help="fit directory (spectrum kind)")
    ap.add_argument("--recon", help="reconstruction directory (field kind)")
    ap.add_argument("--out", required=True)
    args = ap.parse_args(argv)
    render(args.run, args.out, kind=args.kind, fit_dir=args.fit,
           recon_dir=args.recon)
    print(f"wrote {args.out}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
