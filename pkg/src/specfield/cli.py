"""Experiment command line: synth -> fit -> reconstruct -> slice/spectrum-dump.

Exit codes: 0 success (a non-converged fit still exits 0, flagged in the
manifest), 2 usage or configuration error, 3 numerical failure.

Heavy imports happen inside the handlers so SPECFIELD_THREADS can cap BLAS
threads before the numerics load.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
from pathlib import Path

USAGE_ERROR = 2
NUMERICAL_ERROR = 3


def _apply_thread_cap() -> None:
    cap = os.environ.get("SPECFIELD_THREADS")
    if not cap:
        return
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ.setdefault(var, cap)


def _versions() -> dict:
    import numpy
    import scipy

    from . import __version__

    return {
        "specfield": __version__,
        "numpy": numpy.__version__,
        "scipy": scipy.__version__,
        "python": sys.version.split()[0],
    }


def _fail(message: str, code: int) -> "NoReturn":  # noqa: F821
    print(f"error: {message}", file=sys.stderr)
    sys.exit(code)


def _load_config(args) -> "ExperimentConfig":  # noqa: F821
    import yaml

    from .synth import ExperimentConfig, preset_config, PRESET_CASES

    if args.config:
        path = Path(args.config)
        if not path.exists():
            _fail(f"config file not found: {path}", USAGE_ERROR)
        try:
            raw = yaml.safe_load(path.read_text())
            cfg = ExperimentConfig.from_dict(raw)
        except Exception as err:
            _fail(f"bad config {path}: {err}", USAGE_ERROR)
    elif args.case:
        if args.case not in PRESET_CASES:
            _fail(f"unknown case {args.case!r}; choose from {PRESET_CASES}", USAGE_ERROR)
        cfg = preset_config(args.case)
    else:
        _fail("one of --config or --case is required", USAGE_ERROR)

    if getattr(args, "seed_override", None):
        for pair in args.seed_override.split(","):
            try:
                key, value = pair.split("=")
                cfg.seeds[key.strip()] = int(value)
            except ValueError:
                _fail(f"bad --seed-override entry {pair!r}", USAGE_ERROR)
    if getattr(args, "backend", None):
        cfg.hyper["backend"] = args.backend
    if getattr(args, "dense_cap", None) is not None:
        cfg.fit["dense_cap"] = args.dense_cap
    if getattr(args, "probes", None) is not None:
        cfg.fit["probes"] = args.probes
    return cfg


def _write_manifest(out_dir: Path, payload: dict) -> None:
    (out_dir / "manifest.json").write_text(json.dumps(payload, sort_keys=True, indent=1))


def cmd_synth(args) -> int:
    from .synth import generate, save_bundle

    cfg = _load_config(args)
    out = Path(args.out)
    t0 = time.time()
    try:
        bundle = generate(cfg)
        hashes = save_bundle(bundle, out)
    except ValueError as err:
        _fail(str(err), USAGE_ERROR)
    _write_manifest(out, {
        "stage": "synth",
        "config": cfg.to_dict(),
        "seeds": cfg.seeds,
        "versions": _versions(),
        "timings": {"synth_seconds": time.time() - t0},
        "outputs": hashes,
        "n_observed": int(bundle.R.n_observed),
    })
    print(f"wrote bundle to {out}")
    return 0


def _hyper_from_config(cfg):
    from .priors import SmoothnessHyper

    h = cfg.hyper
    return SmoothnessHyper(sigma=float(h["sigma"]), mu=float(h["mu"]),
                           eta=float(h["eta"]), backend=h["backend"])


def cmd_fit(args) -> int:
    import numpy as np

    from .fieldio import file_sha256, write_field_binary, write_csv_table
    from .inference import (
        NoisyDataProblem, PerfectDataProblem, OptimizerConfig,
        curvature_uncertainty, minimize_map,
    )
    from .operators import CGError, OperatorNotPositiveError
    from .synth import load_bundle

    bundle_dir = Path(args.bundle)
    if not (bundle_dir / "config.json").exists():
        _fail(f"no bundle at {bundle_dir}", USAGE_ERROR)
    bundle = load_bundle(bundle_dir)
    cfg = bundle.config
    if args.dense_cap is not None:
        cfg.fit["dense_cap"] = args.dense_cap
    if args.probes is not None:
        cfg.fit["probes"] = args.probes
    if args.backend:
        cfg.hyper["backend"] = args.backend
    hyper = _hyper_from_config(cfg)
    nu = float(cfg.hyper["nu"])
    epsilon = float(cfg.hyper["epsilon"])

    mode = args.mode
    t0 = time.time()
    try:
        if mode == "perfect":
            problem = PerfectDataProblem(bundle.phi, hyper, nu=nu, epsilon=epsilon)
        elif mode == "marginal":
            problem = NoisyDataProblem(
                bundle.d, bundle.R, bundle.noise_sigma, hyper, nu=nu,
                epsilon=epsilon, dense_cap=int(cfg.fit["dense_cap"]),
                n_probes=int(cfg.fit["probes"]),
            )
        else:
            _fail(f"unknown fit mode {mode!r}", USAGE_ERROR)
        opt = OptimizerConfig(max_iters=int(cfg.fit.get("max_iters", 2000)))
        if cfg.fit.get("grad_tol") is not None:
            opt.grad_tol = float(cfg.fit["grad_tol"])
        if args.max_iters is not None:
            opt.max_iters = args.max_iters
        result = minimize_map(problem, opt)
        t_fit = time.time() - t0
        t1 = time.time()
        sqrt_o = curvature_uncertainty(result, problem,
                                       cap=int(cfg.fit["dense_cap"]),
                                       n_probes=int(cfg.fit["probes"]))
        t_unc = time.time() - t1
    except (CGError, OperatorNotPositiveError, np.linalg.LinAlgError) as err:
        _fail(f"numerical failure: {err}", NUMERICAL_ERROR)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    grid = bundle.phi.grid
    write_field_binary(result.tau_bar, grid, out / "tau_bar.f64", space="harmonic")
    write_field_binary(result.delta_bar, grid, out / "delta_bar.f64", space="harmonic")
    write_field_binary(result.tau_bar + np.tan(result.delta_bar), grid,
                       out / "log_power.f64", space="harmonic")
    write_field_binary(sqrt_o, grid, out / "sqrt_O.f64", space="harmonic")
    trace = np.asarray(result.hamiltonian_trace)
    write_csv_table(trace, out / "hamiltonian_trace.csv")
    outputs = {name: file_sha256(out / name) for name in (
        "tau_bar.f64", "delta_bar.f64", "log_power.f64", "sqrt_O.f64",
        "hamiltonian_trace.csv",
    )}
    _write_manifest(out, {
        "stage": "fit",
        "mode": mode,
        "bundle": str(bundle_dir),
        "config": cfg.to_dict(),
        "versions": _versions(),
        "timings": {"fit_seconds": t_fit, "uncertainty_seconds": t_unc},
        "convergence": {
            "converged": bool(result.converged),
            "iterations": int(result.iterations),
            "final_hamiltonian": float(result.hamiltonian_trace[-1]),
            "grad_inf_norm": float(result.grad_inf_norm),
        },
        "flags": result.meta,
        "outputs": outputs,
    })
    if not result.converged:
        print("warning: fit did not reach the gradient tolerance "
              "(results written; see manifest)", file=sys.stderr)
    print(f"wrote fit to {out}")
    return 0


def cmd_reconstruct(args) -> int:
    import numpy as np

    from .fieldio import file_sha256, read_field_binary, write_field_binary
    from .inference import NoisyDataProblem, wiener_reconstruct
    from .model import SpectralParams
    from .operators import CGError, OperatorNotPositiveError
    from .synth import load_bundle

    bundle_dir = Path(args.bundle)
    fit_dir = Path(args.fit)
    for required, where in ((bundle_dir / "config.json", bundle_dir),
                            (fit_dir / "tau_bar.f64", fit_dir)):
        if not required.exists():
            _fail(f"missing inputs in {where}", USAGE_ERROR)
    bundle = load_bundle(bundle_dir)
    cfg = bundle.config
    hyper = _hyper_from_config(cfg)
    tau, grid, _ = read_field_binary(fit_dir / "tau_bar.f64")
    delta, _, _ = read_field_binary(fit_dir / "delta_bar.f64")
    t0 = time.time()
    try:
        problem = NoisyDataProblem(
            bundle.d, bundle.R, bundle.noise_sigma, hyper,
            nu=float(cfg.hyper["nu"]), epsilon=float(cfg.hyper["epsilon"]),
            dense_cap=int(cfg.fit["dense_cap"]), n_probes=int(cfg.fit["probes"]),
        )
        params = SpectralParams(grid, tau, delta,
                                epsilon=float(cfg.hyper["epsilon"]),
                                nu=float(cfg.hyper["nu"]))
        recon = wiener_reconstruct(problem, params)
    except (CGError, OperatorNotPositiveError, np.linalg.LinAlgError) as err:
        _fail(f"numerical failure: {err}", NUMERICAL_ERROR)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_field_binary(recon.mean.values, grid, out / "mean.f64", space="real")
    write_field_binary(recon.uncertainty.values, grid, out / "uncertainty.f64",
                       space="real")
    outputs = {name: file_sha256(out / name) for name in ("mean.f64", "uncertainty.f64")}
    _write_manifest(out, {
        "stage": "reconstruct",
        "bundle": str(bundle_dir),
        "fit": str(fit_dir),
        "versions": _versions(),
        "timings": {"reconstruct_seconds": time.time() - t0},
        "flags": recon.meta,
        "outputs": outputs,
    })
    print(f"wrote reconstruction to {out}")
    return 0


def cmd_slice(args) -> int:
    import numpy as np

    from .fieldio import read_field_binary

    path = Path(args.field)
    if not path.exists():
        _fail(f"field file not found: {path}", USAGE_ERROR)
    values, grid, meta = read_field_binary(path)
    if values.ndim == 1:
        running_axis = 0
        sliced = values
    else:
        if not 0 <= args.axis < values.ndim:
            _fail(f"axis {args.axis} out of range", USAGE_ERROR)
        if not 0 <= args.index < values.shape[args.axis]:
            _fail(f"index {args.index} out of range", USAGE_ERROR)
        sliced = np.take(values, args.index, axis=args.axis)
        if sliced.ndim != 1:
            _fail("slice must reduce the field to one dimension", USAGE_ERROR)
        running_axis = 1 - args.axis if values.ndim == 2 else 0
    coords = grid.coords(running_axis)
    lines = ["coordinate,value"]
    for c, v in zip(coords, sliced):
        lines.append(f"{c:.17g},{v:.17g}")
    Path(args.out).write_text("\n".join(lines) + "\n")
    print(f"wrote slice to {args.out}")
    return 0


def cmd_spectrum_dump(args) -> int:
    import numpy as np

    from .fieldio import read_field_binary
    from .grid import k_coords, Field
    from .inference import normalized_periodogram

    run = Path(args.run)
    truth, grid, _ = read_field_binary(run / "truth_spectrum.f64")
    phi_vals, _, _ = read_field_binary(run / "phi.f64")
    pgram = normalized_periodogram(Field(grid, phi_vals))
    kc = k_coords(grid)
    cols = {"truth": truth.reshape(-1), "periodogram": pgram.reshape(-1)}
    if args.fit:
        fit = Path(args.fit)
        for name, fname in (("tau", "tau_bar.f64"), ("delta", "delta_bar.f64"),
                            ("log_power", "log_power.f64"), ("sqrt_O", "sqrt_O.f64")):
            vals, _, _ = read_field_binary(fit / fname)
            cols[name] = vals.reshape(-1)
    idx = np.indices(grid.shape).reshape(grid.ndim, -1)
    kgrids = [g.reshape(-1) for g in kc.grids()]
    header = (
        [f"i{a}" for a in range(grid.ndim)]
        + [f"k{a}" for a in range(grid.ndim)]
        + list(cols)
    )
    lines = [",".join(header)]
    for j in range(grid.n_cells):
        row = [str(idx[a, j]) for a in range(grid.ndim)]
        row += [f"{kgrids[a][j]:.17g}" for a in range(grid.ndim)]
        row += [f"{cols[name][j]:.17g}" for name in cols]
        lines.append(",".join(row))
    Path(args.out).write_text("\n".join(lines) + "\n")
    print(f"wrote spectrum table to {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="specfield",
        description="Spectral density inference experiments",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_synth = sub.add_parser("synth", help="generate a mock-data bundle")
    p_synth.add_argument("--config", help="YAML experiment config")
    p_synth.add_argument("--case", help="built-in preset name")
    p_synth.add_argument("--out", required=True)
    p_synth.add_argument("--seed-override", help="e.g. field=1,noise=2")
    p_synth.add_argument("--backend", choices=("finite_difference", "fourier"))
    p_synth.add_argument("--dense-cap", type=int)
    p_synth.add_argument("--probes", type=int)
    p_synth.set_defaults(func=cmd_synth)

    p_fit = sub.add_parser("fit", help="MAP spectrum fit on a bundle")
    p_fit.add_argument("--bundle", required=True)
    p_fit.add_argument("--mode", choices=("perfect", "marginal"), default="marginal")
    p_fit.add_argument("--out", required=True)
    p_fit.add_argument("--backend", choices=("finite_difference", "fourier"))
    p_fit.add_argument("--dense-cap", type=int)
    p_fit.add_argument("--probes", type=int)
    p_fit.add_argument("--max-iters", type=int)
    p_fit.set_defaults(func=cmd_fit)

    p_rec = sub.add_parser("reconstruct", help="empirical-Bayes field reconstruction")
    p_rec.add_argument("--bundle", required=True)
    p_rec.add_argument("--fit", required=True)
    p_rec.add_argument("--out", required=True)
    p_rec.set_defaults(func=cmd_reconstruct)

    p_slice = sub.add_parser("slice", help="1D CSV slice of a stored field")
    p_slice.add_argument("--field", required=True)
    p_slice.add_argument("--axis", type=int, default=0)
    p_slice.add_argument("--index", type=int, default=0)
    p_slice.add_argument("--out", required=True)
    p_slice.set_defaults(func=cmd_slice)

    p_dump = sub.add_parser("spectrum-dump", help="per-mode spectrum table")
    p_dump.add_argument("--run", required=True, help="synth bundle directory")
    p_dump.add_argument("--fit", help="optional fit directory")
    p_dump.add_argument("--out", required=True)
    p_dump.set_defaults(func=cmd_spectrum_dump)
    return parser


def main(argv=None) -> int:
    _apply_thread_cap()
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
