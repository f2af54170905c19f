"""Deterministic synthetic-experiment generation.

A bundle holds everything one experiment needs: a field drawn from a target
spectrum, a masked/noisy data vector, the response, and the ground-truth
spectrum.  All randomness is keyed by explicit seeds so bundles are
bit-identical across runs.
"""

from __future__ import annotations

import copy
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .conventions import DEFAULT_DENSE_CAP, DEFAULT_N_PROBES
from .fieldio import file_sha256, write_field_binary, read_field_binary, write_array_binary, read_array_binary
from .grid import Field, RegularGrid, conjugate_reverse, k_coords, make_grid
from .model import SdeSpec, sde_to_spectrum, structured_spectrum
from .operators import MaskResponseOp

__all__ = [
    "ExperimentConfig",
    "Bundle",
    "sample_field",
    "make_mask",
    "add_noise",
    "generate",
    "preset_config",
    "save_bundle",
    "load_bundle",
    "PRESET_CASES",
]


def sample_field(grid: RegularGrid, power: np.ndarray, seed: int) -> Field:
    """Draw one real Gaussian field whose spectral density is `power`.

    Independent complex Gaussians per mode with E|F(k)|^2 = V_total * P(k),
    Hermitian-symmetrized (self-conjugate modes become real Gaussians of the
    same power), then inverse-transformed.
    """
    power = np.asarray(power, dtype=np.float64)
    if power.shape != grid.shape:
        raise ValueError("power shape must match the mode lattice")
    if np.any(power <= 0.0) or not np.all(np.isfinite(power)):
        raise ValueError("power must be strictly positive and finite")
    rng = np.random.default_rng(seed)
    z = (rng.standard_normal(grid.shape) + 1j * rng.standard_normal(grid.shape)) \
        / np.sqrt(2.0)
    # (z + reverse-conjugate z)/sqrt(2) has unit variance per mode and is
    # exactly Hermitian; self-conjugate modes come out real automatically.
    zh = (z + conjugate_reverse(z)) / np.sqrt(2.0)
    coeffs = np.sqrt(grid.total_volume * power) * zh
    vals = np.fft.ifftn(coeffs).real / grid.cell_volume
    return Field(grid, vals)


def make_mask(grid: RegularGrid, spec: dict | None, seed: int | None = None) -> MaskResponseOp:
    """Build the cell-selection response from a mask description.

    spec is None/empty (identity response), {"fraction": f} for uniformly
    random masked cells (requires seed), or {"boxes": [...]} where each box
    lists one [lo, hi) physical interval per axis (null spans the axis).
    """
    keep = np.ones(grid.shape, dtype=bool)
    if spec:
        if "fraction" in spec and "boxes" in spec:
            raise ValueError("mask spec cannot combine fraction and boxes")
        if "fraction" in spec:
            frac = float(spec["fraction"])
            if not 0.0 <= frac < 1.0:
                raise ValueError("masked fraction must lie in [0, 1)")
            n_masked = int(np.floor(frac * grid.n_cells))
            rng = np.random.default_rng(spec.get("seed", seed))
            idx = rng.choice(grid.n_cells, size=n_masked, replace=False)
            keep = keep.reshape(-1)
            keep[idx] = False
            keep = keep.reshape(grid.shape)
        elif "boxes" in spec:
            coords = grid.coord_grids()
            for box in spec["boxes"]:
                if len(box) != grid.ndim:
                    raise ValueError(
                        f"mask box {box} does not match grid dimension {grid.ndim}"
                    )
                inside = np.ones(grid.shape, dtype=bool)
                for axis, interval in enumerate(box):
                    if interval is None:
                        continue
                    lo, hi = float(interval[0]), float(interval[1])
                    inside &= (coords[axis] >= lo) & (coords[axis] < hi)
                keep &= ~inside
        else:
            raise ValueError(f"unrecognized mask spec keys {sorted(spec)}")
    return MaskResponseOp(grid, keep)


def add_noise(clean: np.ndarray, sigma_n: float, seed: int) -> np.ndarray:
    """Add i.i.d. zero-mean Gaussian noise of standard deviation sigma_n."""
    if sigma_n < 0.0:
        raise ValueError("sigma_n must be non-negative")
    clean = np.asarray(clean, dtype=np.float64)
    if sigma_n == 0.0:
        return clean.copy()
    rng = np.random.default_rng(seed)
    return clean + sigma_n * rng.standard_normal(clean.shape)


@dataclass
class ExperimentConfig:
    """Reproducible description of one synthetic experiment."""

    case: str = "custom"
    dims: list = field(default_factory=lambda: [(1024, 1.0)])
    sde: SdeSpec | None = None
    structured: dict | None = None  # parameter overrides for the sin-spectrum
    noise_sigma: float = 0.0
    mask: dict | None = None
    seeds: dict = field(default_factory=lambda: {"field": 1, "noise": 2, "mask": 3})
    hyper: dict = field(default_factory=lambda: {
        "sigma": 2.0, "mu": 2.0, "nu": 0.5 * np.pi, "eta": 0.1,
        "epsilon": 1e-3, "backend": "finite_difference",
    })
    fit: dict = field(default_factory=lambda: {
        "mode": "marginal", "max_iters": 2000, "grad_tol": None,
        "dense_cap": DEFAULT_DENSE_CAP, "probes": DEFAULT_N_PROBES,
    })

    def grid(self) -> RegularGrid:
        return make_grid(self.dims)

    def to_dict(self) -> dict:
        d = {
            "case": self.case,
            "grid": {"dims": [{"n": int(n), "length": float(length)}
                              for n, length in self.dims]},
            "noise_sigma": self.noise_sigma,
            "seeds": dict(self.seeds),
            "hyper": dict(self.hyper),
            "fit": dict(self.fit),
        }
        if self.sde is not None:
            d["sde"] = self.sde.to_dict()
        if self.structured is not None:
            d["structured"] = dict(self.structured)
        if self.mask is not None:
            d["mask"] = copy.deepcopy(self.mask)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        dims = [(g["n"], g["length"]) for g in d["grid"]["dims"]]
        cfg = cls(
            case=d.get("case", "custom"),
            dims=dims,
            sde=SdeSpec.from_dict(d["sde"]) if "sde" in d else None,
            structured=d.get("structured"),
            noise_sigma=float(d.get("noise_sigma", 0.0)),
            mask=copy.deepcopy(d.get("mask")),
            seeds=dict(d.get("seeds", {"field": 1, "noise": 2, "mask": 3})),
        )
        if "hyper" in d:
            cfg.hyper.update(d["hyper"])
        if "fit" in d:
            cfg.fit.update(d["fit"])
        return cfg


PRESET_CASES = ("oscillator1d", "wave2d", "structured2d")


def preset_config(case: str) -> ExperimentConfig:
    """Built-in experiment presets (grids default to unit-length axes)."""
    if case == "oscillator1d":
        return ExperimentConfig(
            case=case,
            dims=[(1024, 1.0)],
            sde=SdeSpec(terms=(((2,), 0.0003), ((1,), 0.001), ((0,), 0.5))),
            noise_sigma=16.0,
            mask={"boxes": [[[-0.35, -0.20]], [[-0.05, 0.07]], [[0.22, 0.30]]]},
            seeds={"field": 101, "noise": 202, "mask": 303},
            hyper={"sigma": 2.0, "mu": 2.0, "nu": 0.5 * np.pi, "eta": 0.1,
                   "epsilon": 1e-3, "backend": "finite_difference"},
        )
    if case == "wave2d":
        return ExperimentConfig(
            case=case,
            dims=[(128, 1.0), (128, 1.0)],
            sde=SdeSpec(terms=(
                ((2, 0), 0.00007),   # alpha d_t^2
                ((0, 2), -0.0002),   # -beta d_x^2
                ((0, 1), -0.0014),   # -gamma d_x
                ((1, 0), -0.0012),   # -rho d_t
                ((0, 0), 0.1),       # m^2
            )),
            noise_sigma=7.0,
            mask={"boxes": [
                [[0.3, 0.5], None],
                [[-0.2, -0.05], [-0.3, -0.1]],
                [[0.05, 0.2], [0.15, 0.35]],
            ]},
            seeds={"field": 404, "noise": 505, "mask": 606},
            hyper={"sigma": 2.5, "mu": 2.5, "nu": 0.5 * np.pi, "eta": 0.1,
                   "epsilon": 1e-3, "backend": "finite_difference"},
        )
    if case == "structured2d":
        return ExperimentConfig(
            case=case,
            dims=[(128, 1.0), (128, 1.0)],
            structured={},
            noise_sigma=1.0,
            mask={"boxes": [
                [[0.3, 0.5], None],
                [[-0.2, -0.05], [-0.3, -0.1]],
                [[0.05, 0.2], [0.15, 0.35]],
            ]},
            seeds={"field": 707, "noise": 808, "mask": 909},
            hyper={"sigma": 4.0, "mu": 4.0, "nu": 0.5 * np.pi, "eta": 0.1,
                   "epsilon": 1e-3, "backend": "finite_difference"},
        )
    raise ValueError(f"unknown preset case {case!r}")


@dataclass
class Bundle:
    config: ExperimentConfig
    phi: Field
    d: np.ndarray
    R: MaskResponseOp
    noise_sigma: float
    truth_spectrum: np.ndarray


def truth_spectrum_for(config: ExperimentConfig) -> np.ndarray:
    grid = config.grid()
    kc = k_coords(grid)
    if config.sde is not None:
        return sde_to_spectrum(config.sde, kc)
    if config.structured is not None:
        return structured_spectrum(kc, config.structured)
    raise ValueError("config needs either an sde or a structured spectrum")


def generate(config: ExperimentConfig) -> Bundle:
    """Generate the full experiment bundle for a config."""
    grid = config.grid()
    truth = truth_spectrum_for(config)
    phi = sample_field(grid, truth, int(config.seeds["field"]))
    mask_op = make_mask(grid, config.mask, seed=int(config.seeds.get("mask", 0)))
    clean = mask_op.extract(phi.values.reshape(-1))
    d = add_noise(clean, config.noise_sigma, int(config.seeds["noise"]))
    return Bundle(config, phi, d, mask_op, config.noise_sigma, truth)


BUNDLE_FILES = ("phi.f64", "d.f64", "mask.f64", "truth_spectrum.f64")


def save_bundle(bundle: Bundle, out_dir) -> dict:
    """Write the bundle; returns {filename: sha256} for the manifest."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    grid = bundle.phi.grid
    write_field_binary(bundle.phi.values, grid, out / "phi.f64", space="real")
    write_array_binary(bundle.d, out / "d.f64", {"kind": "data_vector"})
    write_field_binary(bundle.R.keep.astype(np.float64), grid, out / "mask.f64",
                       space="real")
    write_field_binary(bundle.truth_spectrum, grid, out / "truth_spectrum.f64",
                       space="harmonic")
    (out / "config.json").write_text(
        json.dumps(bundle.config.to_dict(), sort_keys=True, indent=1))
    hashes = {}
    for name in BUNDLE_FILES + ("config.json",):
        hashes[name] = file_sha256(out / name)
        sidecar = (out / name).with_suffix(".json")
        if sidecar.exists() and name != "config.json":
            hashes[sidecar.name] = file_sha256(sidecar)
    return hashes


def load_bundle(in_dir) -> Bundle:
    src = Path(in_dir)
    config = ExperimentConfig.from_dict(json.loads((src / "config.json").read_text()))
    phi_vals, grid, _ = read_field_binary(src / "phi.f64")
    d, _ = read_array_binary(src / "d.f64")
    mask_vals, _, _ = read_field_binary(src / "mask.f64")
    truth, _, _ = read_field_binary(src / "truth_spectrum.f64")
    return Bundle(
        config=config,
        phi=Field(grid, phi_vals),
        d=d.reshape(-1),
        R=MaskResponseOp(grid, mask_vals > 0.5),
        noise_sigma=config.noise_sigma,
        truth_spectrum=truth,
    )
