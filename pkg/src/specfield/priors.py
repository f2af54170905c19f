"""Smoothness priors on functions of harmonic coordinates.

Two Gaussian precision operators act on real fields defined over the mode
lattice (log-spectrum components):

* a smoothness precision penalizing squared second derivatives with respect
  to log|k|, including the mixed-derivative cross terms that make saddle
  shapes costly in more than one dimension:

      psi' T^-1 psi = (1/strength^2) * sum_{i<=j} c_ij *
                      integral d^M(log k) |d^2 psi / dlog|k_i| dlog|k_j||^2

  with c_ii = 1 and c_ij = 2 for i < j;

* a zero-mode precision penalizing plain second k-derivatives,

      psi' D_eta^-1 psi = (1/eta^2) * integral |d^2 psi / dk^2|^2 dk,

  which is what constrains the k = 0 region where log coordinates (and
  hence the smoothness stencils) are undefined.

Log derivatives treat negative coordinates through |k| (the line element of
the complex logarithm has |dlog(-k)| = |dlog k|), so each half-axis carries
the same log-abscissa ladder and the construction is exactly symmetric under
k -> -k.  Modes with a zero coordinate on any axis never enter a smoothness
stencil.  The Nyquist mode belongs to both half-axes and its quadrature
weight is doubled accordingly.

Two differentiation backends exist: non-uniform finite-difference stencils
on the log|k| ladder (default), and spectral differentiation using the
identity d^2/dlog(y)^2 = y^2 d^2/dy^2 + y d/dy.  They are never mixed within
one inference run.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse

from .grid import RegularGrid, k_coords
from .operators import LinOp, SparseSymOp, SumOp

__all__ = [
    "SmoothnessHyper",
    "LogCoordMap",
    "build_smoothness_precision",
    "build_zero_mode_precision",
    "log_second_derivative",
    "prior_energy",
    "prior_gradient",
    "ZeroOp",
]

BACKENDS = ("finite_difference", "fourier")


@dataclass(frozen=True)
class SmoothnessHyper:
    """Hyper-parameters of the spectral priors.

    sigma and mu are the smoothness strengths for the smooth and divergent
    log-spectrum components respectively; eta scales the zero-mode prior.
    Infinite strengths disable the corresponding term.
    """

    sigma: float = 2.0
    mu: float = 2.0
    eta: float = 0.1
    backend: str = "finite_difference"

    def __post_init__(self):
        for name in ("sigma", "mu", "eta"):
            if not getattr(self, name) > 0.0:
                raise ValueError(f"{name} must be strictly positive")
        if self.backend not in BACKENDS:
            raise ValueError(f"unknown backend {self.backend!r}")


class LogCoordMap:
    """log|k| bookkeeping for every harmonic axis of a grid.

    Per axis: the half-axis ladder of log-abscissae (positions m = 1..n/2,
    abscissa log(m dk)), trapezoidal integration weights on that ladder, the
    per-mode ladder positions, and the k = 0 flags where the map is
    undefined.
    """

    def __init__(self, grid: RegularGrid):
        self.grid = grid
        kc = k_coords(grid)
        self.log_abs = []      # per axis: log|k| per mode (0 at the zero mode)
        self.zero_mask = []    # per axis: True at the k = 0 mode
        self.ladder_xi = []    # per axis: log-abscissae, ladder positions 1..n/2
        self.ladder_w = []     # per axis: trapezoid weights on the ladder
        self.mode_level = []   # per axis: ladder position per mode (0 => zero mode)
        self.mode_weight = []  # per axis: measure weight per mode (Nyquist doubled)
        for a, ax in enumerate(grid.axes):
            n = ax.n_points
            coords = kc.axis(a)
            zero = coords == 0.0
            logs = np.where(zero, 0.0, np.log(np.abs(np.where(zero, 1.0, coords))))
            dk = 2.0 * np.pi / ax.length
            xi = np.log(dk * np.arange(1, n // 2 + 1))
            w = np.empty_like(xi)
            if xi.size >= 2:
                w[0] = 0.5 * (xi[1] - xi[0])
                w[-1] = 0.5 * (xi[-1] - xi[-2])
                if xi.size > 2:
                    w[1:-1] = 0.5 * (xi[2:] - xi[:-2])
            else:
                w[:] = 0.0
            level = np.minimum(np.abs(np.fft.fftfreq(n, 1.0 / n)).astype(int), n // 2)
            mode_w = np.where(zero, 0.0, w[np.maximum(level, 1) - 1])
            mode_w = np.where(level == n // 2, 2.0 * mode_w, mode_w)
            self.log_abs.append(np.where(zero, -np.inf, logs))
            self.zero_mask.append(zero)
            self.ladder_xi.append(xi)
            self.ladder_w.append(w)
            self.mode_level.append(level)
            self.mode_weight.append(mode_w)

    def fft_index(self, axis: int, half: int, m: int) -> int:
        """FFT storage index of ladder position m on the given half-axis."""
        n = self.grid.axes[axis].n_points
        return m if half > 0 else (n - m) % n


def _d2_coeffs(x0, x1, x2):
    # second derivative of the quadratic through (x0, x1, x2); constant in x
    return (
        2.0 / ((x1 - x0) * (x2 - x0)),
        -2.0 / ((x2 - x1) * (x1 - x0)),
        2.0 / ((x2 - x1) * (x2 - x0)),
    )


def _d1_coeffs(x0, x1, x2, xt):
    # first derivative at xt of the quadratic through (x0, x1, x2)
    return (
        (2.0 * xt - x1 - x2) / ((x0 - x1) * (x0 - x2)),
        (2.0 * xt - x0 - x2) / ((x1 - x0) * (x1 - x2)),
        (2.0 * xt - x0 - x1) / ((x2 - x0) * (x2 - x1)),
    )


def _axis_second_rows(lcm: LogCoordMap, axis: int):
    """Per half-axis: (ladder positions, stencil index triples, coefficient
    triples, weights) for second log-derivatives.  One-sided 3-point stencils
    at both ladder ends; empty if the ladder is too short."""
    xi = lcm.ladder_xi[axis]
    w = lcm.ladder_w[axis]
    half_n = xi.size
    rows = []
    if half_n < 3:
        return rows
    for m in range(1, half_n + 1):
        c = min(max(m, 2), half_n - 1)  # center of the 3-point set
        pts = (c - 1, c, c + 1)
        coeffs = _d2_coeffs(xi[pts[0] - 1], xi[pts[1] - 1], xi[pts[2] - 1])
        rows.append((m, pts, coeffs, w[m - 1]))
    return rows


def _axis_first_rows(lcm: LogCoordMap, axis: int):
    """Like _axis_second_rows but for first log-derivatives at each ladder
    position (2-point slope when the ladder has only two points)."""
    xi = lcm.ladder_xi[axis]
    w = lcm.ladder_w[axis]
    half_n = xi.size
    rows = []
    if half_n < 2:
        return rows
    if half_n == 2:
        slope = 1.0 / (xi[1] - xi[0])
        for m in (1, 2):
            rows.append((m, (1, 2), (-slope, slope), w[m - 1]))
        return rows
    for m in range(1, half_n + 1):
        c = min(max(m, 2), half_n - 1)
        pts = (c - 1, c, c + 1)
        coeffs = _d1_coeffs(xi[pts[0] - 1], xi[pts[1] - 1], xi[pts[2] - 1], xi[m - 1])
        rows.append((m, pts, coeffs, w[m - 1]))
    return rows


def _other_axis_modes(lcm: LogCoordMap, axes_used: tuple[int, ...]):
    """Iterate (index tuple template, weight) over the non-differentiated
    axes, excluding their zero modes."""
    grid = lcm.grid
    others = [a for a in range(grid.ndim) if a not in axes_used]
    if not others:
        yield {}, 1.0
        return
    ranges = []
    for a in others:
        n = grid.axes[a].n_points
        idx = [j for j in range(n) if not lcm.zero_mask[a][j]]
        ranges.append(idx)
    grids = np.meshgrid(*ranges, indexing="ij")
    flat = [g.reshape(-1) for g in grids]
    for row in zip(*flat):
        weight = 1.0
        assign = {}
        for a, j in zip(others, row):
            assign[a] = int(j)
            weight *= lcm.mode_weight[a][j]
        yield assign, weight


def _assemble_form(grid: RegularGrid, rows) -> scipy.sparse.csr_matrix:
    """Build D^T W D from row triples (col_indices, coeffs, weight)."""
    n = grid.n_cells
    data, ri, ci = [], [], []
    weights = []
    for r, (cols, coeffs, wgt) in enumerate(rows):
        for c, v in zip(cols, coeffs):
            ri.append(r)
            ci.append(c)
            data.append(v)
        weights.append(wgt)
    if not weights:
        return scipy.sparse.csr_matrix((n, n))
    d = scipy.sparse.coo_matrix((data, (ri, ci)), shape=(len(weights), n)).tocsr()
    w = scipy.sparse.diags(np.asarray(weights))
    return (d.T @ w @ d).tocsr()


def _pure_term(grid: RegularGrid, lcm: LogCoordMap, axis: int) -> scipy.sparse.csr_matrix:
    shape = grid.shape
    second = _axis_second_rows(lcm, axis)
    rows = []
    for assign, other_w in _other_axis_modes(lcm, (axis,)):
        for half in (+1, -1):
            for m, pts, coeffs, wgt in second:
                cols = []
                for p in pts:
                    idx = list(shape)
                    for a, j in assign.items():
                        idx[a] = j
                    idx[axis] = lcm.fft_index(axis, half, p)
                    cols.append(np.ravel_multi_index(tuple(idx), shape))
                rows.append((cols, coeffs, wgt * other_w))
    return _assemble_form(grid, rows)


def _cross_term(grid: RegularGrid, lcm: LogCoordMap, ax_a: int, ax_b: int) -> scipy.sparse.csr_matrix:
    shape = grid.shape
    first_a = _axis_first_rows(lcm, ax_a)
    first_b = _axis_first_rows(lcm, ax_b)
    rows = []
    for assign, other_w in _other_axis_modes(lcm, (ax_a, ax_b)):
        for half_a in (+1, -1):
            for half_b in (+1, -1):
                for ma, pa, ca, wa in first_a:
                    for mb, pb, cb, wb in first_b:
                        cols, coeffs = [], []
                        for p, cva in zip(pa, ca):
                            for q, cvb in zip(pb, cb):
                                idx = list(shape)
                                for a, j in assign.items():
                                    idx[a] = j
                                idx[ax_a] = lcm.fft_index(ax_a, half_a, p)
                                idx[ax_b] = lcm.fft_index(ax_b, half_b, q)
                                cols.append(np.ravel_multi_index(tuple(idx), shape))
                                coeffs.append(cva * cvb)
                        rows.append((cols, coeffs, wa * wb * other_w))
    return _assemble_form(grid, rows)


class ZeroOp(LinOp):
    """The zero operator (disabled prior term)."""

    def __init__(self, n: int):
        self.shape = (n, n)

    def apply(self, x):
        return np.zeros_like(x)

    adjoint_apply = apply

    @property
    def self_adjoint(self):
        return True

    def diagonal(self):
        return np.zeros(self.shape[0])


def build_smoothness_precision(grid: RegularGrid, strength: float,
                               backend: str = "finite_difference") -> LinOp:
    """Precision operator of the log-log smoothness prior (see module doc).

    Self-adjoint and positive semi-definite; its null space contains all
    power laws exp(const) * prod |k_i|^alpha_i on the nonzero-coordinate
    modes.
    """
    n = grid.n_cells
    if not np.isfinite(strength):
        return ZeroOp(n)
    if strength <= 0:
        raise ValueError("strength must be positive")
    if backend == "fourier":
        return FourierSmoothnessOp(grid, strength)
    if backend != "finite_difference":
        raise ValueError(f"unknown backend {backend!r}")
    lcm = LogCoordMap(grid)
    total = scipy.sparse.csr_matrix((n, n))
    for a in range(grid.ndim):
        total = total + _pure_term(grid, lcm, a)
        for b in range(a + 1, grid.ndim):
            total = total + 2.0 * _cross_term(grid, lcm, a, b)
    return SparseSymOp(total / strength**2)


def build_zero_mode_precision(grid: RegularGrid, eta: float) -> LinOp:
    """Precision of the plain second-k-derivative prior regularizing k = 0.

    Second differences run along each axis on the signed-coordinate ladder
    (no wrap-around), rows chosen symmetrically under k -> -k; affine
    functions of the coordinates carry zero energy.
    """
    n = grid.n_cells
    if not np.isfinite(eta):
        return ZeroOp(n)
    if eta <= 0:
        raise ValueError("eta must be positive")
    shape = grid.shape
    total = scipy.sparse.csr_matrix((n, n))
    row_weight = grid.mode_volume  # uniform d^M k measure per row
    for a, ax in enumerate(grid.axes):
        na = ax.n_points
        dk = 2.0 * np.pi / ax.length
        # sorted position p <-> coordinate (p - n/2) dk <-> FFT index (p - n/2) mod n
        fft_of_pos = [(p - na // 2) % na for p in range(na)]
        other_axes = [b for b in range(grid.ndim) if b != a]
        other_shape = tuple(grid.axes[b].n_points for b in other_axes)
        coeffs = (1.0 / dk**2, -2.0 / dk**2, 1.0 / dk**2)
        rows = []
        for combo in np.ndindex(other_shape):
            for p in range(2, na - 1):
                cols = []
                for q in (p - 1, p, p + 1):
                    idx = [0] * grid.ndim
                    for b, j in zip(other_axes, combo):
                        idx[b] = j
                    idx[a] = fft_of_pos[q]
                    cols.append(np.ravel_multi_index(tuple(idx), shape))
                rows.append((cols, coeffs, row_weight))
        total = total + _assemble_form(grid, rows)
    return SparseSymOp(total / eta**2)


class FourierSmoothnessOp(LinOp):
    """Smoothness precision with spectral differentiation.

    Uses d^2/dlog(y)^2 = y^2 d^2/dy^2 + y d/dy and mixed-term analogue
    (y_i y_j d^2/dy_i dy_j), with derivatives taken by Fourier multiplication
    on the mode lattice.  The quadrature rows and weights match the
    finite-difference backend.
    """

    def __init__(self, grid: RegularGrid, strength: float):
        self.grid = grid
        self.strength = float(strength)
        n = grid.n_cells
        self.shape = (n, n)
        lcm = LogCoordMap(grid)
        kc = k_coords(grid)
        self._coord = kc.grids()
        nonzero = np.ones(grid.shape, dtype=bool)
        weight = np.ones(grid.shape)
        for a in range(grid.ndim):
            shape_a = [1] * grid.ndim
            shape_a[a] = grid.axes[a].n_points
            nonzero &= ~lcm.zero_mask[a].reshape(shape_a)
            weight = weight * lcm.mode_weight[a].reshape(shape_a)
        self._row_weight = np.where(nonzero, weight, 0.0)
        # dual coordinates of the k-lattice circle, Nyquist zeroed for odd-order
        self._dual = []
        self._dual_sq = []
        for a, ax in enumerate(grid.axes):
            na = ax.n_points
            dk = 2.0 * np.pi / ax.length
            c = 2.0 * np.pi * np.fft.fftfreq(na, d=dk)
            c_odd = c.copy()
            c_odd[na // 2] = 0.0
            self._dual.append(c_odd)
            self._dual_sq.append(c)

    def _d1(self, x: np.ndarray, axis: int) -> np.ndarray:
        h = np.fft.fft(x, axis=axis)
        shape = [1] * self.grid.ndim
        shape[axis] = -1
        h *= 1j * self._dual[axis].reshape(shape)
        return np.fft.ifft(h, axis=axis)

    def _d2(self, x: np.ndarray, axis: int) -> np.ndarray:
        h = np.fft.fft(x, axis=axis)
        shape = [1] * self.grid.ndim
        shape[axis] = -1
        h *= -(self._dual_sq[axis].reshape(shape) ** 2)
        return np.fft.ifft(h, axis=axis)

    def _log_d2_pure(self, x: np.ndarray, axis: int) -> np.ndarray:
        y = self._coord[axis]
        return y * y * self._d2(x, axis) + y * self._d1(x, axis)

    def _log_d2_pure_adj(self, x: np.ndarray, axis: int) -> np.ndarray:
        y = self._coord[axis]
        return self._d2(y * y * x, axis) - self._d1(y * x, axis)

    def _log_d2_cross(self, x: np.ndarray, ax_a: int, ax_b: int) -> np.ndarray:
        return self._coord[ax_a] * self._coord[ax_b] * self._d1(self._d1(x, ax_a), ax_b)

    def _log_d2_cross_adj(self, x: np.ndarray, ax_a: int, ax_b: int) -> np.ndarray:
        return self._d1(self._d1(self._coord[ax_a] * self._coord[ax_b] * x, ax_a), ax_b)

    def mixed_log_second(self, x: np.ndarray, ax_a: int, ax_b: int) -> np.ndarray:
        if ax_a == ax_b:
            return self._log_d2_pure(x, ax_a).real
        return self._log_d2_cross(x, ax_a, ax_b).real

    def apply(self, x: np.ndarray) -> np.ndarray:
        v = x.reshape(self.grid.shape).astype(np.complex128)
        out = np.zeros_like(v)
        w = self._row_weight
        for a in range(self.grid.ndim):
            out += self._log_d2_pure_adj(w * self._log_d2_pure(v, a), a)
            for b in range(a + 1, self.grid.ndim):
                out += 2.0 * self._log_d2_cross_adj(
                    w * self._log_d2_cross(v, a, b), a, b
                )
        return (out.real / self.strength**2).reshape(x.shape)

    def adjoint_apply(self, y: np.ndarray) -> np.ndarray:
        return self.apply(y)

    @property
    def self_adjoint(self) -> bool:
        return True


def log_second_derivative(psi: np.ndarray, grid: RegularGrid,
                          axis_pair: tuple[int, int],
                          backend: str = "finite_difference") -> np.ndarray:
    """Mixed second derivative of psi with respect to log|k_i|, log|k_j|.

    Returns a mode-lattice array; entries at modes with a zero coordinate on
    a differentiated axis are 0 (the map is undefined there).  With the
    finite-difference backend, the Nyquist mode carries its positive-half
    one-sided stencil.
    """
    ai, aj = axis_pair
    ndim = grid.ndim
    if not (0 <= ai < ndim and 0 <= aj < ndim):
        raise ValueError(f"axis pair {axis_pair} out of range for {ndim}D grid")
    psi = np.asarray(psi, dtype=np.float64).reshape(grid.shape)
    if backend == "fourier":
        op = FourierSmoothnessOp(grid, 1.0)
        out = op.mixed_log_second(psi.astype(np.complex128), ai, aj)
        for a in set(axis_pair):
            lcm_mask = k_coords(grid).axis(a) == 0.0
            sel = [slice(None)] * ndim
            sel[a] = lcm_mask
            out[tuple(sel)] = 0.0
        return out
    if backend != "finite_difference":
        raise ValueError(f"unknown backend {backend!r}")
    lcm = LogCoordMap(grid)

    def apply_first_or_second(values, axis, rows):
        out = np.zeros_like(values)
        n = grid.axes[axis].n_points
        for half in (+1, -1):
            for m, pts, coeffs, _w in rows:
                tgt = lcm.fft_index(axis, half, m)
                if half < 0 and tgt == n // 2:
                    continue  # Nyquist keeps the positive-half stencil
                acc = np.zeros(values.take(0, axis=axis).shape)
                for p, c in zip(pts, coeffs):
                    acc = acc + c * values.take(lcm.fft_index(axis, half, p), axis=axis)
                sel = [slice(None)] * ndim
                sel[axis] = tgt
                out[tuple(sel)] = acc
        return out

    if ai == aj:
        return apply_first_or_second(psi, ai, _axis_second_rows(lcm, ai))
    out = apply_first_or_second(psi, ai, _axis_first_rows(lcm, ai))
    return apply_first_or_second(out, aj, _axis_first_rows(lcm, aj))


def prior_energy(psi: np.ndarray, grid: RegularGrid, strength: float,
                 eta: float = 0.1, backend: str = "finite_difference") -> float:
    """(1/2) psi' (T^-1 + D_eta^-1) psi."""
    t_inv = build_smoothness_precision(grid, strength, backend)
    d_inv = build_zero_mode_precision(grid, eta)
    flat = np.asarray(psi, dtype=np.float64).reshape(-1)
    return 0.5 * float(flat @ t_inv.apply(flat) + flat @ d_inv.apply(flat))


def prior_gradient(psi: np.ndarray, grid: RegularGrid, strength: float,
                   eta: float = 0.1, backend: str = "finite_difference") -> np.ndarray:
    """(T^-1 + D_eta^-1) psi, the gradient of prior_energy."""
    t_inv = build_smoothness_precision(grid, strength, backend)
    d_inv = build_zero_mode_precision(grid, eta)
    flat = np.asarray(psi, dtype=np.float64).reshape(-1)
    return (t_inv.apply(flat) + d_inv.apply(flat)).reshape(np.shape(psi))


def combined_precision(grid: RegularGrid, strength: float, eta: float,
                       backend: str = "finite_difference") -> LinOp:
    """T^-1 + D_eta^-1 as one operator (used by the inference module)."""
    return SumOp([
        build_smoothness_precision(grid, strength, backend),
        build_zero_mode_precision(grid, eta),
    ])
