"""Log-log spectrum overlay for 1D runs.

Solid line: true spectrum; dots: sample periodogram; dashed: full MAP
log-spectrum; dotted: smooth component alone; gray band: one-sigma
uncertainty of the log-spectrum.  The signed frequency axis is folded to
|omega| for display.
"""

from __future__ import annotations

import argparse

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from .runfiles import load_bundle_files, load_fit_files, one_sided, periodogram


def render(run_dir, fit_dir, out_path):
    bundle = load_bundle_files(run_dir)
    fit = load_fit_files(fit_dir)
    meta = bundle["meta"]
    pgram = periodogram(bundle["phi"], meta)

    k, truth = one_sided(bundle["truth"], meta)
    _, dots = one_sided(pgram, meta)
    _, lp = one_sided(fit["log_power"], meta)
    _, tau = one_sided(fit["tau"], meta)
    _, band = one_sided(fit["sqrt_o"], meta)

    fig, ax = plt.subplots(figsize=(7, 5))
    ax.fill_between(k, np.exp(lp - band), np.exp(lp + band), color="0.85",
                    label="1 sigma")
    ax.plot(k, truth, "-", color="k", lw=1.2, label="true spectrum")
    ax.plot(k, dots, ".", color="k", ms=2.5, label="sample spectrum")
    ax.plot(k, np.exp(lp), "--", color="C3", lw=1.2, label="MAP")
    ax.plot(k, np.exp(tau), ":", color="C0", lw=1.2, label="smooth component")
    ax.set_xscale("log")
    ax.set_yscale("log")
    ax.set_xlabel("|omega|")
    ax.set_ylabel("P")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(out_path, dpi=150)
    return fig


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description="log-log spectrum overlay")
    ap.add_argument("--run", required=True, help="synth bundle directory")
    ap.add_argument("--fit", required=True, help="fit directory")
    ap.add_argument("--out", required=True)
    args = ap.parse_args(argv)
    render(args.run, args.fit, args.out)
    print(f"wrote {args.out}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
