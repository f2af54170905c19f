"""Spectral-density model: parameterized spectra and linear SDE spectra.

The modeled spectral density splits the log-spectrum into a smooth component
tau and a divergence-capable component tan(delta):

    P(k) = exp[tau(k) + tan(delta(k))],   |delta| <= pi/2 - epsilon.

A linear constant-coefficient SDE  g(d/dt, d/dx) phi = xi  with white (or
harmonically diagonal) excitation has the exact spectral density

    P(k) = P_xi(k) / |f(k)|^2,   f(k) = g(i omega, i k),

which supplies ground truths for synthetic experiments.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .conventions import MAX_POWER
from .grid import KCoords, RegularGrid
from .operators import DiagonalHarmonicOp

__all__ = [
    "SpectralParams",
    "SdeSpec",
    "spectrum_from_params",
    "sde_char",
    "sde_to_spectrum",
    "structured_spectrum",
    "STRUCTURED_DEFAULTS",
]


@dataclass
class SpectralParams:
    """The inference unknowns: tau and delta fields over the mode lattice.

    delta is hard-clamped to [-b, b] with b = pi/2 - epsilon on construction
    and after every update; nu is the scale of the ridge prior pulling delta
    to zero.
    """

    grid: RegularGrid
    tau: np.ndarray
    delta: np.ndarray
    epsilon: float = 1e-3
    nu: float = 0.5 * np.pi

    def __post_init__(self):
        if not 0.0 < self.epsilon < 0.5 * np.pi:
            raise ValueError("epsilon must lie in (0, pi/2)")
        if self.nu <= 0.0:
            raise ValueError("nu must be positive")
        tau = np.asarray(self.tau, dtype=np.float64).reshape(self.grid.shape)
        delta = np.asarray(self.delta, dtype=np.float64).reshape(self.grid.shape)
        if not np.all(np.isfinite(tau)):
            raise ValueError("tau must be finite")
        if not np.all(np.isfinite(delta)):
            raise ValueError("delta must be finite")
        self.tau = tau
        self.delta = np.clip(delta, -self.bound, self.bound)

    @property
    def bound(self) -> float:
        return 0.5 * np.pi - self.epsilon

    @classmethod
    def zeros(cls, grid: RegularGrid, epsilon: float = 1e-3,
              nu: float = 0.5 * np.pi) -> "SpectralParams":
        z = np.zeros(grid.shape)
        return cls(grid, z, z.copy(), epsilon, nu)

    def with_values(self, tau: np.ndarray, delta: np.ndarray) -> "SpectralParams":
        return SpectralParams(self.grid, tau, delta, self.epsilon, self.nu)

    def log_power(self) -> np.ndarray:
        return self.tau + np.tan(self.delta)

    def power(self) -> np.ndarray:
        lp = self.log_power()
        cap = np.log(MAX_POWER)
        if np.any(lp > cap):
            warnings.warn("modeled spectrum capped at MAX_POWER", RuntimeWarning)
            lp = np.minimum(lp, cap)
        return np.exp(lp)


def spectrum_from_params(p: SpectralParams) -> DiagonalHarmonicOp:
    """Field covariance operator with diagonal P(k) = exp(tau + tan delta)."""
    return DiagonalHarmonicOp(p.grid, p.power())


@dataclass(frozen=True)
class SdeSpec:
    """Linear constant-coefficient differential operator, as a term list.

    Each term is (orders, coeff): orders gives the derivative order per axis
    (time first), coeff the real coefficient.  noise_spectrum is the constant
    spectral density of the white excitation.
    """

    terms: tuple = field(default_factory=tuple)
    noise_spectrum: float = 1.0

    def __post_init__(self):
        terms = tuple(
            (tuple(int(o) for o in orders), float(c)) for orders, c in self.terms
        )
        if not terms:
            raise ValueError("SdeSpec needs at least one term")
        if self.noise_spectrum <= 0.0:
            raise ValueError("noise_spectrum must be positive")
        object.__setattr__(self, "terms", terms)

    def to_dict(self) -> dict:
        return {
            "terms": [{"orders": list(o), "coeff": c} for o, c in self.terms],
            "noise_spectrum": self.noise_spectrum,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SdeSpec":
        return cls(
            terms=tuple((t["orders"], t["coeff"]) for t in d["terms"]),
            noise_spectrum=d.get("noise_spectrum", 1.0),
        )


def sde_char(spec: SdeSpec, kc: KCoords) -> np.ndarray:
    """Characteristic function f(k): the operator symbol at (i omega, i k).

    Real coefficients give f(-k) = f(k)*.
    """
    coords = kc.grids()
    ndim = len(coords)
    out = np.zeros(kc.grid.shape, dtype=np.complex128)
    for orders, coeff in spec.terms:
        if len(orders) != ndim:
            raise ValueError(
                f"term orders {orders} do not match grid dimension {ndim}"
            )
        term = np.full(kc.grid.shape, coeff, dtype=np.complex128)
        for axis, order in enumerate(orders):
            if order:
                term = term * (1j * coords[axis]) ** order
        out += term
    return out


def sde_to_spectrum(spec: SdeSpec, kc: KCoords) -> np.ndarray:
    """Exact spectral density P(k) = P_xi / |f(k)|^2 of the SDE.

    Raises if f vanishes at a discrete mode (on-grid divergence); perturb
    parameters or resolution in that case.
    """
    f = sde_char(spec, kc)
    af2 = np.abs(f) ** 2
    if np.any(af2 == 0.0):
        raise ValueError("spectrum diverges on-grid: |f| = 0 at a mode")
    return spec.noise_spectrum / af2


STRUCTURED_DEFAULTS = {
    "m2": 1.1, "alpha": 0.0025, "beta": 0.0011, "gamma": 0.002, "rho": 0.004,
}


def structured_spectrum(kc: KCoords, params: dict | None = None) -> np.ndarray:
    """Highly structured 2D benchmark spectrum.

        P(omega, k) = 2 / [(m2 - sin(alpha k^2 - beta omega^2))^2
                           + (gamma k + rho omega)^2]

    with axis 0 = omega (time frequency) and axis 1 = k.
    """
    if kc.grid.ndim != 2:
        raise ValueError("structured spectrum is defined on 2D grids")
    p = dict(STRUCTURED_DEFAULTS)
    if params:
        p.update(params)
    omega, k = kc.grids()
    denom = (p["m2"] - np.sin(p["alpha"] * k**2 - p["beta"] * omega**2)) ** 2 \
        + (p["gamma"] * k + p["rho"] * omega) ** 2
    out = 2.0 / denom
    if not np.all(np.isfinite(out)):
        raise ValueError("structured spectrum produced non-finite values")
    return out
