"""Slice plots through 2D runs: field, data and reconstruction along lines.

Left column: spatial structure at two fixed times; right column: temporal
evolution at two fixed locations.
"""

from __future__ import annotations

import argparse

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from .runfiles import axis_coords, data_on_grid, load_bundle_files, load_recon_files


def render(run_dir, recon_dir, out_path, t_indices=None, x_indices=None):
    bundle = load_bundle_files(run_dir)
    recon = load_recon_files(recon_dir)
    meta = bundle["meta"]
    nt, nx = meta["shape"]
    t_indices = t_indices or [nt // 4, (3 * nt) // 4]
    x_indices = x_indices or [nx // 3, (2 * nx) // 3]
    t = axis_coords(meta, 0)
    x = axis_coords(meta, 1)
    d_grid = data_on_grid(bundle)

    fig, axes = plt.subplots(2, 2, figsize=(10, 7))
    for row, ti in enumerate(t_indices[:2]):
        ax = axes[row, 0]
        ax.plot(x, bundle["phi"][ti, :], color="C0", lw=0.9, label="signal")
        ax.plot(x, d_grid[ti, :], ".", color="k", ms=3, label="data")
        m = recon["mean"][ti, :]
        s = recon["uncertainty"][ti, :]
        ax.fill_between(x, m - s, m + s, color="0.85")
        ax.plot(x, m, color="C3", lw=0.9, label="reconstruction")
        ax.set_title(f"t = {t[ti]:.3g}", fontsize=9)
        ax.set_xlabel("x")
    for row, xi in enumerate(x_indices[:2]):
        ax = axes[row, 1]
        ax.plot(t, bundle["phi"][:, xi], color="C0", lw=0.9, label="signal")
        ax.plot(t, d_grid[:, xi], ".", color="k", ms=3, label="data")
        m = recon["mean"][:, xi]
        s = recon["uncertainty"][:, xi]
        ax.fill_between(t, m - s, m + s, color="0.85")
        ax.plot(t, m, color="C3", lw=0.9, label="reconstruction")
        ax.set_title(f"x = {x[xi]:.3g}", fontsize=9)
        ax.set_xlabel("t")
    axes[0, 0].legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(out_path, dpi=150)
    return fig


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description="slice plots through a 2D run")
    ap.add_argument("--run", required=True, help="synth bundle directory")
    ap.add_argument("--recon", required=True, help="reconstruction directory")
    ap.add_argument("--out", required=True)
    ap.add_argument("--t-index", type=int, action="append", dest="t_indices")
    ap.add_argument("--x-index", type=int, action="append", dest="x_indices")
    args = ap.parse_args(argv)
    render(args.run, args.recon, args.out, args.t_indices, args.x_indices)
    print(f"wrote {args.out}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
