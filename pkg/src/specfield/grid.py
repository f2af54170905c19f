"""Regular periodic space-time grids, fields on them, and harmonic transforms.

Axis 0 is the time axis by convention; all axes are periodic.  Physical
coordinates are centered, i.e. axis i covers [-L_i/2, L_i/2) in steps of
L_i/n_i.  Transforms use standard DFT index phases (translation offsets do
not matter for anything spectral); the centered coordinates exist for masks,
serialization and plotting.

Scaling of the transforms follows :mod:`specfield.conventions`.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .conventions import HERMITIAN_TOL

__all__ = [
    "RegularGrid",
    "Field",
    "HarmonicField",
    "KCoords",
    "make_grid",
    "fft_forward",
    "fft_inverse",
    "inner_product",
    "harmonic_inner_product",
    "k_coords",
    "conjugate_reverse",
    "hermitian_violation",
]


@dataclass(frozen=True)
class AxisSpec:
    """One grid axis: number of cells and physical length."""

    n_points: int
    length: float

    def __post_init__(self):
        if self.n_points < 4 or self.n_points % 2 != 0:
            raise ValueError(
                f"n_points must be even and >= 4, got {self.n_points}"
            )
        if not (self.length > 0.0 and np.isfinite(self.length)):
            raise ValueError(f"length must be positive, got {self.length}")


@dataclass(frozen=True)
class RegularGrid:
    """Regular periodic grid over 1-3 dimensions (time first)."""

    axes: tuple[AxisSpec, ...]

    def __post_init__(self):
        if not 1 <= len(self.axes) <= 3:
            raise ValueError("grid dimension must be 1, 2 or 3")

    @property
    def ndim(self) -> int:
        return len(self.axes)

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(ax.n_points for ax in self.axes)

    @property
    def n_cells(self) -> int:
        return int(np.prod(self.shape))

    @property
    def lengths(self) -> tuple[float, ...]:
        return tuple(ax.length for ax in self.axes)

    @property
    def spacings(self) -> tuple[float, ...]:
        return tuple(ax.length / ax.n_points for ax in self.axes)

    @property
    def cell_volume(self) -> float:
        return float(np.prod(self.spacings))

    @property
    def total_volume(self) -> float:
        return float(np.prod(self.lengths))

    @property
    def mode_spacings(self) -> tuple[float, ...]:
        return tuple(2.0 * np.pi / ax.length for ax in self.axes)

    @property
    def mode_volume(self) -> float:
        return float(np.prod(self.mode_spacings))

    def coords(self, axis: int) -> np.ndarray:
        """Centered physical coordinates along one axis."""
        ax = self.axes[axis]
        dx = ax.length / ax.n_points
        return -0.5 * ax.length + dx * np.arange(ax.n_points)

    def coord_grids(self) -> list[np.ndarray]:
        """Broadcast coordinate arrays, one per axis, each of grid shape."""
        one_d = [self.coords(i) for i in range(self.ndim)]
        return list(np.meshgrid(*one_d, indexing="ij"))


def make_grid(dims) -> RegularGrid:
    """Build a grid from (n_points, length) pairs (or a single pair)."""
    if isinstance(dims, tuple) and len(dims) == 2 and np.isscalar(dims[0]):
        dims = [dims]
    return RegularGrid(tuple(AxisSpec(int(n), float(length)) for n, length in dims))


def _check_finite(values: np.ndarray, what: str) -> None:
    if not np.all(np.isfinite(values)):
        raise ValueError(f"{what} contains non-finite values")


@dataclass(frozen=True)
class Field:
    """Real scalar field sampled on a regular grid."""

    grid: RegularGrid
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.shape != self.grid.shape:
            raise ValueError(
                f"field shape {v.shape} does not match grid {self.grid.shape}"
            )
        _check_finite(v, "field")
        object.__setattr__(self, "values", v)

    def flat(self) -> np.ndarray:
        return self.values.reshape(-1)


def conjugate_reverse(values: np.ndarray) -> np.ndarray:
    """Return v(-k)* on the discrete mode lattice (FFT storage order)."""
    out = np.conj(values)
    for axis in range(values.ndim):
        out = np.roll(np.flip(out, axis=axis), 1, axis=axis)
    return out


def hermitian_violation(values: np.ndarray) -> float:
    """Relative deviation of a harmonic array from Hermitian symmetry."""
    scale = np.max(np.abs(values))
    if scale == 0.0:
        return 0.0
    return float(np.max(np.abs(values - conjugate_reverse(values))) / scale)


@dataclass(frozen=True)
class HarmonicField:
    """Complex coefficients over the harmonic mode lattice of a grid.

    ``hermitian=True`` tags the array as the transform of a real field and
    enforces v(-k) = v(k)* to relative tolerance HERMITIAN_TOL.
    """

    grid: RegularGrid
    values: np.ndarray
    hermitian: bool = True

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.complex128)
        if v.shape != self.grid.shape:
            raise ValueError(
                f"harmonic shape {v.shape} does not match grid {self.grid.shape}"
            )
        _check_finite(v.view(np.float64), "harmonic field")
        if self.hermitian and hermitian_violation(v) > HERMITIAN_TOL:
            raise ValueError("harmonic field violates Hermitian symmetry")
        object.__setattr__(self, "values", v)

    def flat(self) -> np.ndarray:
        return self.values.reshape(-1)


def fft_forward(f: Field) -> HarmonicField:
    """Continuum-consistent forward transform (multiplies by cell volume)."""
    vals = np.fft.fftn(f.values) * f.grid.cell_volume
    return HarmonicField(f.grid, vals, hermitian=True)


def fft_inverse(h: HarmonicField) -> Field:
    """Inverse transform back to a real field.

    Raises ValueError if the coefficients are not Hermitian symmetric enough
    for the result to be real.
    """
    if hermitian_violation(h.values) > 1e-10:
        raise ValueError("harmonic field is not the transform of a real field")
    vals = np.fft.ifftn(h.values) / h.grid.cell_volume
    return Field(h.grid, vals.real)


def inner_product(a: Field, b: Field) -> float:
    """Volume-weighted inner product approximating the continuum integral."""
    if a.grid != b.grid:
        raise ValueError("inner product requires fields on the same grid")
    return float(np.sum(a.values * b.values) * a.grid.cell_volume)


def harmonic_inner_product(a: HarmonicField, b: HarmonicField) -> complex:
    """Harmonic-space counterpart; equals `inner_product` via Parseval."""
    if a.grid != b.grid:
        raise ValueError("inner product requires fields on the same grid")
    return complex(np.sum(np.conj(a.values) * b.values) / a.grid.total_volume)


@dataclass(frozen=True)
class KCoords:
    """Signed harmonic coordinates of every mode, in FFT storage order."""

    grid: RegularGrid
    axes_coords: tuple[np.ndarray, ...] = field(init=False, default=())

    def __post_init__(self):
        coords = tuple(
            2.0 * np.pi * np.fft.fftfreq(ax.n_points, d=ax.length / ax.n_points)
            for ax in self.grid.axes
        )
        object.__setattr__(self, "axes_coords", coords)

    def axis(self, i: int) -> np.ndarray:
        """1D signed coordinates along harmonic axis i."""
        return self.axes_coords[i]

    def grids(self) -> list[np.ndarray]:
        """Broadcast signed coordinate arrays, one per axis."""
        return list(np.meshgrid(*self.axes_coords, indexing="ij"))

    def axis_abs(self, i: int) -> np.ndarray:
        return np.abs(self.axes_coords[i])

    def radius(self) -> np.ndarray:
        """|k| over the full mode lattice."""
        gs = self.grids()
        return np.sqrt(sum(g * g for g in gs))


def k_coords(grid: RegularGrid) -> KCoords:
    return KCoords(grid)
