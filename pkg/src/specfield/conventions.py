"""Normalization convention for discrete transforms, frozen in one place.

All discretization-dependent scalings in this package derive from a single
choice: discrete sums approximate continuum integrals.

* Real-space inner product:   <a, b> = cell_volume * sum_x a(x) b(x)
* Forward transform:          F[f](k) = cell_volume * sum_x f(x) exp(-i k.x)
* Inverse transform:          f(x) = (1/total_volume) * sum_k F(k) exp(+i k.x)
* Harmonic inner product:     <A, B> = (1/total_volume) * sum_k conj(A_k) B_k

With these choices Parseval's identity holds exactly on the grid, and a
stationary covariance with spectral density P(k) gives harmonic coefficients
with E|F(k)|^2 = total_volume * P(k).  The "power-normalized" coefficient
F(k)/sqrt(total_volume) therefore has expected squared magnitude P(k); all
likelihood formulas in :mod:`specfield.inference` are written in terms of it.

Nothing else in the package may introduce its own transform scaling.
"""

# Relative tolerance below which a harmonic array counts as Hermitian
# symmetric (transform of a real field).
HERMITIAN_TOL = 1e-12

# Largest grid (total cells) for which dense-matrix code paths are used by
# default.  Above this, stochastic probe estimators take over.
DEFAULT_DENSE_CAP = 4096

# Default number of Rademacher probes for stochastic diagonal/trace estimates.
DEFAULT_N_PROBES = 64

# Cap applied to exp() of the modeled log-spectrum to keep it finite.
MAX_POWER = 1e300
