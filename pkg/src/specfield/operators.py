"""Linear-operator algebra on grids: apply/adjoint/compose, conjugate
gradients, dense materialization, log-determinants and diagonal estimation.

Operators act on flat float64 vectors (real-space cell values unless noted).
All concrete operators here are immutable after construction.  Self-adjoint
means self-adjoint under the volume-weighted field inner product; since cell
volumes are uniform, the dense matrix of a self-adjoint operator is symmetric
in plain coordinates.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
import scipy.sparse

from .conventions import DEFAULT_DENSE_CAP, DEFAULT_N_PROBES
from .grid import Field, HarmonicField, RegularGrid

__all__ = [
    "apply",
    "LinOp",
    "DiagonalHarmonicOp",
    "MaskResponseOp",
    "ScaledIdentityOp",
    "SumOp",
    "ChainOp",
    "SparseSymOp",
    "CGConfig",
    "CGResult",
    "CGError",
    "OperatorNotPositiveError",
    "DenseCapError",
    "cg_solve",
    "dense_materialize",
    "log_det",
    "diag_estimate",
    "harmonic_kernel_matrix",
    "dense_harmonic_diag",
]


def apply(op: "LinOp", v):
    """Typed application: Field -> Field, HarmonicField -> HarmonicField,
    plain arrays -> plain arrays."""
    if isinstance(v, HarmonicField):
        if isinstance(op, DiagonalHarmonicOp):
            return op.apply_field(v)
        raise TypeError(f"{type(op).__name__} has no harmonic-space action")
    if isinstance(v, Field):
        if op.shape[1] != v.grid.n_cells:
            raise ValueError("operator domain does not match the field grid")
        out = op.apply(v.flat())
        return Field(v.grid, out.reshape(v.grid.shape))
    return op.apply(np.asarray(v, dtype=np.float64))


class OperatorNotPositiveError(ValueError):
    """Raised when a computation requires positivity the operator lacks."""


class DenseCapError(ValueError):
    """Raised when a dense path is requested above the configured cap."""


class CGError(RuntimeError):
    """Conjugate-gradient failure; carries the last iterate and residual."""

    def __init__(self, message, x=None, residual=None, iterations=0):
        super().__init__(message)
        self.x = x
        self.residual = residual
        self.iterations = iterations


class LinOp:
    """Abstract linear operator with apply and adjoint-apply."""

    #: (codomain size, domain size) in flat coordinates
    shape: tuple[int, int]

    def apply(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def adjoint_apply(self, y: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    @property
    def self_adjoint(self) -> bool:
        return False

    def diagonal(self) -> np.ndarray | None:
        """Exact matrix diagonal in the acting basis, if cheap, else None."""
        return None

    def eigenvalues(self) -> np.ndarray | None:
        """Exact eigenvalue multiset for operators diagonal in a known
        basis (used by log_det(method="diagonal")); None otherwise."""
        return None

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return self.apply(x)

    def __add__(self, other: "LinOp") -> "SumOp":
        return SumOp([self, other])

    def __matmul__(self, other: "LinOp") -> "ChainOp":
        return ChainOp([self, other])


class DiagonalHarmonicOp(LinOp):
    """Multiplication by a positive function of k in harmonic space.

    As a real-space operator: x -> ifft(diag * fft(x)).  Its eigenvalues are
    exactly the diagonal entries, which log_det(diagonal) relies on.
    """

    def __init__(self, grid: RegularGrid, diag: np.ndarray):
        diag = np.asarray(diag, dtype=np.float64)
        if diag.shape != grid.shape:
            raise ValueError("diagonal shape must match the grid mode lattice")
        if not np.all(np.isfinite(diag)) or np.any(diag <= 0.0):
            raise ValueError("harmonic diagonal must be strictly positive and finite")
        self.grid = grid
        self._diag = diag
        n = grid.n_cells
        self.shape = (n, n)

    def apply(self, x: np.ndarray) -> np.ndarray:
        v = x.reshape(self.grid.shape)
        out = np.fft.ifftn(self._diag * np.fft.fftn(v)).real
        return out.reshape(x.shape)

    def adjoint_apply(self, y: np.ndarray) -> np.ndarray:
        return self.apply(y)

    @property
    def self_adjoint(self) -> bool:
        return True

    def diagonal(self) -> np.ndarray:
        # cell-basis matrix diagonal: constant (the stationary variance)
        return np.full(self.shape[0], float(self._diag.mean()))

    def eigenvalues(self) -> np.ndarray:
        return self._diag.reshape(-1)

    @property
    def mode_values(self) -> np.ndarray:
        """Grid-shaped diagonal values per harmonic mode."""
        return self._diag

    def apply_harmonic(self, values: np.ndarray) -> np.ndarray:
        return self._diag * values

    def apply_field(self, f):
        """Typed application: Field -> Field, HarmonicField -> HarmonicField."""
        if isinstance(f, HarmonicField):
            return HarmonicField(self.grid, self._diag * f.values, f.hermitian)
        if isinstance(f, Field):
            return Field(self.grid, self.apply(f.values.reshape(-1)).reshape(self.grid.shape))
        raise TypeError(f"cannot apply to {type(f)!r}")

    def inverse(self) -> "DiagonalHarmonicOp":
        return DiagonalHarmonicOp(self.grid, 1.0 / self._diag)


class MaskResponseOp(LinOp):
    """Cell-selection response: zero out masked cells / extract observed ones.

    As a LinOp it is the 0/1 diagonal projector onto observed cells.
    `extract`/`inject` convert between full fields and compressed data
    vectors of length n_observed.
    """

    def __init__(self, grid: RegularGrid, keep: np.ndarray):
        keep = np.asarray(keep, dtype=bool)
        if keep.shape != grid.shape:
            raise ValueError("mask shape must match the grid")
        if not keep.any():
            raise ValueError("mask observes no cells")
        self.grid = grid
        self.keep = keep
        self._keep_flat = keep.reshape(-1)
        n = grid.n_cells
        self.shape = (n, n)

    @property
    def n_observed(self) -> int:
        return int(self._keep_flat.sum())

    def apply(self, x: np.ndarray) -> np.ndarray:
        return np.where(self._keep_flat, x, 0.0)

    def adjoint_apply(self, y: np.ndarray) -> np.ndarray:
        return self.apply(y)

    @property
    def self_adjoint(self) -> bool:
        return True

    def diagonal(self) -> np.ndarray:
        return self._keep_flat.astype(np.float64)

    def eigenvalues(self) -> np.ndarray:
        return self._keep_flat.astype(np.float64)

    def extract(self, x: np.ndarray) -> np.ndarray:
        return x.reshape(-1)[self._keep_flat]

    def inject(self, d: np.ndarray) -> np.ndarray:
        out = np.zeros(self.grid.n_cells)
        out[self._keep_flat] = d
        return out


class ScaledIdentityOp(LinOp):
    """scale * identity on a flat space of size n (e.g. noise covariance)."""

    def __init__(self, n: int, scale: float):
        if not (scale > 0.0 and np.isfinite(scale)):
            raise ValueError("scale must be positive and finite")
        self.scale = float(scale)
        self.shape = (n, n)

    def apply(self, x: np.ndarray) -> np.ndarray:
        return self.scale * x

    def adjoint_apply(self, y: np.ndarray) -> np.ndarray:
        return self.scale * y

    @property
    def self_adjoint(self) -> bool:
        return True

    def diagonal(self) -> np.ndarray:
        return np.full(self.shape[0], self.scale)

    def eigenvalues(self) -> np.ndarray:
        return np.full(self.shape[0], self.scale)


class SumOp(LinOp):
    """Weighted sum of operators with a common shape."""

    def __init__(self, ops, weights=None):
        ops = list(ops)
        if not ops:
            raise ValueError("SumOp needs at least one operator")
        if any(op.shape != ops[0].shape for op in ops):
            raise ValueError("summands must share a shape")
        self.ops = ops
        self.weights = [1.0] * len(ops) if weights is None else [float(w) for w in weights]
        self.shape = ops[0].shape

    def apply(self, x: np.ndarray) -> np.ndarray:
        out = self.weights[0] * self.ops[0].apply(x)
        for w, op in zip(self.weights[1:], self.ops[1:]):
            out += w * op.apply(x)
        return out

    def adjoint_apply(self, y: np.ndarray) -> np.ndarray:
        out = self.weights[0] * self.ops[0].adjoint_apply(y)
        for w, op in zip(self.weights[1:], self.ops[1:]):
            out += w * op.adjoint_apply(y)
        return out

    @property
    def self_adjoint(self) -> bool:
        return all(op.self_adjoint for op in self.ops)

    def diagonal(self) -> np.ndarray | None:
        parts = [op.diagonal() for op in self.ops]
        if any(p is None for p in parts):
            return None
        return sum(w * p for w, p in zip(self.weights, parts))


class ChainOp(LinOp):
    """Composition: ChainOp([A, B]).apply(x) == A(B(x))."""

    def __init__(self, ops):
        ops = list(ops)
        if not ops:
            raise ValueError("ChainOp needs at least one operator")
        for left, right in zip(ops[:-1], ops[1:]):
            if left.shape[1] != right.shape[0]:
                raise ValueError("chained operator shapes are incompatible")
        self.ops = ops
        self.shape = (ops[0].shape[0], ops[-1].shape[1])

    def apply(self, x: np.ndarray) -> np.ndarray:
        for op in reversed(self.ops):
            x = op.apply(x)
        return x

    def adjoint_apply(self, y: np.ndarray) -> np.ndarray:
        for op in self.ops:
            y = op.adjoint_apply(y)
        return y


class SparseSymOp(LinOp):
    """Self-adjoint operator backed by a symmetric sparse matrix."""

    def __init__(self, mat: scipy.sparse.spmatrix):
        if mat.shape[0] != mat.shape[1]:
            raise ValueError("sparse operator must be square")
        self.mat = mat.tocsr()
        self.shape = mat.shape

    def apply(self, x: np.ndarray) -> np.ndarray:
        return self.mat @ x

    def adjoint_apply(self, y: np.ndarray) -> np.ndarray:
        return self.mat @ y

    @property
    def self_adjoint(self) -> bool:
        return True

    def diagonal(self) -> np.ndarray:
        # matrix diagonal (not an eigenbasis diagonal); used for
        # preconditioning, not for log_det(diagonal)
        return np.asarray(self.mat.diagonal())

    def to_dense(self) -> np.ndarray:
        return self.mat.toarray()


@dataclass
class CGConfig:
    rel_tolerance: float = 1e-8
    abs_tolerance: float = 1e-12
    max_iters: int | None = None  # default 10 * N
    preconditioner: LinOp | None = None

    def __post_init__(self):
        if self.rel_tolerance <= 0 or self.abs_tolerance <= 0:
            raise ValueError("tolerances must be positive")
        if self.max_iters is not None and self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")


@dataclass
class CGResult:
    x: np.ndarray
    iterations: int
    residual: float


def cg_solve(op: LinOp, b: np.ndarray, cfg: CGConfig | None = None) -> CGResult:
    """Solve op x = b for a self-adjoint positive-definite operator.

    Convergence means |op x - b| / |b| <= rel_tolerance (true residual, not
    the preconditioned one).  Raises CGError on breakdown ("operator not
    positive") or when max_iters is exhausted.
    """
    cfg = cfg or CGConfig()
    b = np.asarray(b, dtype=np.float64)
    n = b.size
    max_iters = cfg.max_iters if cfg.max_iters is not None else 10 * n

    b_norm = float(np.linalg.norm(b))
    if b_norm == 0.0:
        return CGResult(np.zeros_like(b), 0, 0.0)
    target = max(cfg.rel_tolerance * b_norm, cfg.abs_tolerance)

    x = np.zeros_like(b)
    r = b.copy()
    z = cfg.preconditioner.apply(r) if cfg.preconditioner is not None else r
    p = z.copy()
    rz = float(r @ z)

    for it in range(1, max_iters + 1):
        ap = op.apply(p)
        pap = float(p @ ap)
        if pap <= 0.0:
            raise CGError(
                "operator not positive", x=x,
                residual=float(np.linalg.norm(r)) / b_norm, iterations=it,
            )
        alpha = rz / pap
        x += alpha * p
        r -= alpha * ap
        res = float(np.linalg.norm(r))
        if res <= target:
            return CGResult(x, it, res / b_norm)
        z = cfg.preconditioner.apply(r) if cfg.preconditioner is not None else r
        rz_next = float(r @ z)
        p = z + (rz_next / rz) * p
        rz = rz_next

    raise CGError(
        f"no convergence within {max_iters} iterations",
        x=x, residual=float(np.linalg.norm(r)) / b_norm, iterations=max_iters,
    )


def dense_materialize(op: LinOp, cap: int = DEFAULT_DENSE_CAP) -> np.ndarray:
    """Materialize op column by column; refuses above the dense cap."""
    m, n = op.shape
    if max(m, n) > cap:
        raise DenseCapError(f"operator size {op.shape} exceeds dense cap {cap}")
    if isinstance(op, SparseSymOp):
        return op.to_dense()
    if isinstance(op, DiagonalHarmonicOp):
        return harmonic_kernel_matrix(op.grid, op.mode_values)
    out = np.empty((m, n))
    e = np.zeros(n)
    for j in range(n):
        e[j] = 1.0
        out[:, j] = op.apply(e)
        e[j] = 0.0
    return out


def harmonic_kernel_matrix(grid: RegularGrid, kern: np.ndarray) -> np.ndarray:
    """Dense matrix of x -> ifft(kern * fft(x)) via batched transforms."""
    n = grid.n_cells
    shape = grid.shape
    eye = np.eye(n).reshape(shape + (n,))
    axes = tuple(range(grid.ndim))
    h = np.fft.fftn(eye, axes=axes)
    h *= kern[..., None]
    return np.fft.ifftn(h, axes=axes).real.reshape(n, n)


def dense_harmonic_diag(grid: RegularGrid, mat: np.ndarray) -> np.ndarray:
    """Diagonal of a dense cell-space operator in the orthonormal mode basis.

    Returns, per mode k, <e_k, M e_k> with e_k(x) = exp(i k.x)/sqrt(V_total),
    shaped like the mode lattice.  For self-adjoint M the result is real.
    """
    n = grid.n_cells
    shape = grid.shape
    ndim = grid.ndim
    a = mat.reshape(shape + shape)
    a = np.fft.fftn(a, axes=tuple(range(ndim)))
    a = np.fft.ifftn(a, axes=tuple(range(ndim, 2 * ndim))) * n
    a = a.reshape(n, n)
    diag = np.einsum("ii->i", a)
    scale = grid.cell_volume / grid.total_volume
    return (diag * scale).reshape(shape)


def log_det(op: LinOp, method: str = "exact", cap: int = DEFAULT_DENSE_CAP) -> float:
    """log-determinant of a self-adjoint positive operator.

    "exact" uses a Cholesky factorization of the dense form (desk scale
    only); "diagonal" sums log of the exact diagonal and is valid only for
    operators that are diagonal in their eigenbasis (harmonic diagonals,
    scaled identities, sums of those).
    """
    if method == "diagonal":
        d = op.eigenvalues()
        if d is None:
            raise ValueError("operator is not diagonal in a known basis")
        if np.any(d <= 0.0):
            raise OperatorNotPositiveError("operator not positive")
        return float(np.sum(np.log(d)))
    if method != "exact":
        raise ValueError(f"unknown log_det method {method!r}")
    mat = dense_materialize(op, cap=cap)
    try:
        chol = scipy.linalg.cholesky(mat, lower=True, check_finite=False)
    except scipy.linalg.LinAlgError as err:
        raise OperatorNotPositiveError("operator not positive") from err
    return float(2.0 * np.sum(np.log(np.diag(chol))))


def diag_estimate(op: LinOp, n_probes: int = DEFAULT_N_PROBES, seed: int = 0,
                  cap: int = DEFAULT_DENSE_CAP) -> np.ndarray:
    """Diagonal of a self-adjoint operator.

    Exact for operators exposing their diagonal, exact via dense
    materialization under the cap, otherwise a Hutchinson estimate with
    Rademacher probes: diag ~ mean_z[z * (op z)].
    """
    if n_probes < 1:
        raise ValueError("n_probes must be >= 1")
    d = op.diagonal()
    if d is not None:
        return d.copy()
    n = op.shape[1]
    if n <= cap:
        return np.einsum("ii->i", dense_materialize(op, cap=cap)).copy()
    rng = np.random.default_rng(seed)
    acc = np.zeros(n)
    for _ in range(n_probes):
        z = rng.integers(0, 2, size=n) * 2.0 - 1.0
        acc += z * op.apply(z)
    return acc / n_probes
