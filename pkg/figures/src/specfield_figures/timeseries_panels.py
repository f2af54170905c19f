"""Three stacked panels for 1D runs: data, signal, reconstruction + band."""

from __future__ import annotations

import argparse

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from .runfiles import axis_coords, data_on_grid, load_bundle_files, load_recon_files


def render(run_dir, recon_dir, out_path):
    bundle = load_bundle_files(run_dir)
    recon = load_recon_files(recon_dir)
    t = axis_coords(bundle["meta"], 0)
    d_grid = data_on_grid(bundle)

    fig, axes = plt.subplots(3, 1, figsize=(8, 7), sharex=True)
    axes[0].plot(t, d_grid, ".", ms=2, color="k")
    axes[0].set_ylabel("data d")
    axes[1].plot(t, bundle["phi"], lw=0.8, color="C0")
    axes[1].set_ylabel("signal")
    m, s = recon["mean"], recon["uncertainty"]
    axes[2].fill_between(t, m - s, m + s, color="0.8", label="1 sigma")
    axes[2].plot(t, m, lw=0.8, color="C3", label="reconstruction")
    axes[2].set_ylabel("reconstruction")
    axes[2].set_xlabel("t")
    axes[2].legend(loc="upper right", fontsize=8)
    fig.tight_layout()
    fig.savefig(out_path, dpi=150)
    return fig


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description="data/signal/reconstruction panels")
    ap.add_argument("--run", required=True, help="synth bundle directory")
    ap.add_argument("--recon", required=True, help="reconstruction directory")
    ap.add_argument("--out", required=True)
    args = ap.parse_args(argv)
    render(args.run, args.recon, args.out)
    print(f"wrote {args.out}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
