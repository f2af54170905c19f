"""MAP inference of spectral densities and empirical-Bayes reconstruction.

Two observation models share the spectral parameterization of
:mod:`specfield.model`:

* perfect data: the field realization itself is observed.  Up to constants,
  with p_k the power-normalized periodogram and P_k the modeled spectrum,

      H = 1/2 sum_k [ p_k / P_k + log P_k ]  + prior terms;

* noisy, masked data d = R phi + n with white noise variance s^2.  The field
  is marginalized out analytically:

      H = 1/2 [ log|Phi| - log|D| - <j, D j> ] + prior terms,
      D = (R' N^-1 R + Phi^-1)^-1,   j = R' N^-1 d.

Prior terms are 1/2 tau' (T_sigma^-1 + D_eta^-1) tau for the smooth
component and 1/2 delta' (T_mu^-1 + D_eta^-1 + 1/nu^2) delta for the
divergence component.

Gradients are analytic.  For the marginal case the likelihood gradient per
mode k is  1/2 [1 - (D_kk + |m_k|^2) / P_k]  with m = Dj and D_kk the
harmonic-basis diagonal of D; it is computed exactly from a dense
factorization at desk scale and by Rademacher probing above the dense cap.

MAP estimates come from a projected quasi-Newton (L-BFGS) minimizer with
cubic backtracking; delta is clamped to its admissible box after every step.
Uncertainty of the log-spectrum uses the Laplace approximation in the
(tau, tan delta) variables; the reported per-mode one-sigma is the
quadrature sum of both curvature blocks' inverse diagonals.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .conventions import DEFAULT_DENSE_CAP, DEFAULT_N_PROBES
from .grid import Field, RegularGrid, fft_forward, k_coords
from .model import SpectralParams
from .operators import (
    CGConfig,
    CGError,
    DiagonalHarmonicOp,
    LinOp,
    MaskResponseOp,
    cg_solve,
    dense_harmonic_diag,
    harmonic_kernel_matrix,
)
from .priors import SmoothnessHyper, combined_precision

__all__ = [
    "PerfectDataProblem",
    "NoisyDataProblem",
    "MapResult",
    "Reconstruction",
    "OptimizerConfig",
    "perfect_hamiltonian",
    "perfect_gradient",
    "marginal_hamiltonian",
    "marginal_gradient",
    "minimize_map",
    "curvature_uncertainty",
    "transformed_hamiltonian",
    "wiener_reconstruct",
    "normalized_periodogram",
    "smooth_over_radius",
]


def normalized_periodogram(f: Field) -> np.ndarray:
    """|F(k)|^2 / total_volume: unbiased single-sample spectrum estimate."""
    h = fft_forward(f)
    return (np.abs(h.values) ** 2) / f.grid.total_volume


def smooth_over_radius(values: np.ndarray, radius: np.ndarray, window: int = 5) -> np.ndarray:
    """Moving average over modes ordered by |k| (initialization helper)."""
    flat = values.reshape(-1)
    order = np.argsort(radius.reshape(-1), kind="stable")
    kernel = np.ones(window) / window
    sm = np.convolve(flat[order], kernel, mode="same")
    out = np.empty_like(sm)
    out[order] = sm
    return out.reshape(values.shape)


def _prior_consistent_start(tau0: np.ndarray, priors: _PriorSet) -> np.ndarray:
    """Solve (W + Q) tau = W tau0 with W = I/2 (the likelihood curvature
    scale at a balanced fit) so the starting point carries prior energy of
    the same order as the likelihood instead of exploding at high |k|,
    where the log-coordinate stencils are extremely stiff."""
    q = priors.tau_sparse()
    if q is None:
        return tau0
    import scipy.sparse
    import scipy.sparse.linalg

    n = tau0.size
    w = 0.5
    lhs = (q + scipy.sparse.identity(n) * w).tocsc()
    flat = scipy.sparse.linalg.splu(lhs).solve(w * tau0.reshape(-1))
    return flat.reshape(tau0.shape)


class _PriorSet:
    """Prior precision operators and their energies for one grid.

    The ridge pulling the divergence component to zero is the quadratic
    form (1/nu^2) <delta, delta> under the package's harmonic inner product
    (sum over modes divided by total volume), keeping all dagger products in
    one convention.
    """

    def __init__(self, grid: RegularGrid, hyper: SmoothnessHyper, nu: float):
        self.grid = grid
        self.hyper = hyper
        self.nu = float(nu)
        self.ridge = 1.0 / (self.nu**2 * grid.total_volume)
        self.tau_prec = combined_precision(grid, hyper.sigma, hyper.eta, hyper.backend)
        self.mu_prec = combined_precision(grid, hyper.mu, hyper.eta, hyper.backend)

    def tau_energy(self, tau_flat: np.ndarray) -> float:
        return 0.5 * float(tau_flat @ self.tau_prec.apply(tau_flat))

    def tau_grad(self, tau_flat: np.ndarray) -> np.ndarray:
        return self.tau_prec.apply(tau_flat)

    def delta_energy(self, delta_flat: np.ndarray) -> float:
        quad = float(delta_flat @ self.mu_prec.apply(delta_flat))
        ridge = self.ridge * float(delta_flat @ delta_flat)
        return 0.5 * (quad + ridge)

    def delta_grad(self, delta_flat: np.ndarray) -> np.ndarray:
        return self.mu_prec.apply(delta_flat) + self.ridge * delta_flat

    def _prec_diag(self, op) -> np.ndarray:
        d = op.diagonal()
        if d is not None:
            return d
        from .operators import diag_estimate

        return diag_estimate(op, n_probes=16, seed=5,
                             cap=min(self.grid.n_cells, DEFAULT_DENSE_CAP))

    def tau_diag(self) -> np.ndarray:
        return self._prec_diag(self.tau_prec)

    @staticmethod
    def _sparse_of(sum_op, n):
        import scipy.sparse

        parts = []
        for w, op in zip(sum_op.weights, sum_op.ops):
            if hasattr(op, "mat"):
                parts.append(w * op.mat)
            elif type(op).__name__ == "ZeroOp":
                continue
            else:
                return None
        if not parts:
            return scipy.sparse.csr_matrix((n, n))
        return sum(parts[1:], parts[0])

    def tau_sparse(self):
        """Sparse matrix of the tau precision, or None (fourier backend)."""
        return self._sparse_of(self.tau_prec, self.grid.n_cells)

    def mu_sparse(self):
        return self._sparse_of(self.mu_prec, self.grid.n_cells)

    def delta_diag(self) -> np.ndarray:
        return self._prec_diag(self.mu_prec) + self.ridge


class _SpectralProblem:
    """Shared state and parameter packing for both observation models."""

    def __init__(self, grid: RegularGrid, hyper: SmoothnessHyper,
                 nu: float, epsilon: float):
        self.grid = grid
        self.hyper = hyper
        self.nu = float(nu)
        self.epsilon = float(epsilon)
        self.bound = 0.5 * np.pi - self.epsilon
        self.n_modes = grid.n_cells
        self.priors = _PriorSet(grid, hyper, nu)
        self._tau_prior_diag = self.priors.tau_diag()
        self._delta_prior_diag = self.priors.delta_diag()
        self.params: SpectralParams | None = None

    def make_params(self, tau: np.ndarray, delta: np.ndarray) -> SpectralParams:
        return SpectralParams(self.grid, tau, delta, self.epsilon, self.nu)

    def pack(self, tau: np.ndarray, delta: np.ndarray) -> np.ndarray:
        return np.concatenate([np.ravel(tau), np.ravel(delta)])

    def unpack(self, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        n = self.n_modes
        return x[:n], x[n:]

    def project(self, x: np.ndarray) -> np.ndarray:
        out = x.copy()
        out[self.n_modes:] = np.clip(out[self.n_modes:], -self.bound, self.bound)
        return out

    def hessian_diag_estimate(self) -> np.ndarray:
        """Positive diagonal Hessian model (fallback preconditioner).  The
        prior diagonals span many orders of magnitude in |k|; the likelihood
        curvature per mode is the cached rho = (data power)/(model power)
        from the last gradient call."""
        rho = getattr(self, "_last_rho", None)
        lik = 0.5 * np.clip(rho.reshape(-1), 0.05, 1e8) if rho is not None \
            else np.full(self.n_modes, 0.5)
        ht = lik + self._tau_prior_diag
        hd = lik + self._delta_prior_diag
        return np.maximum(np.concatenate([ht, hd]), 1e-8)

    def initial_inverse_hessian(self):
        """Block application of (diag(lik curvature) + prior precision)^-1,
        the dominating Hessian structure, via sparse factorization.  Falls
        back to the diagonal model when the priors are not sparse."""
        q_tau = self.priors.tau_sparse()
        q_mu = self.priors.mu_sparse()
        if q_tau is None or q_mu is None:
            inv_diag = 1.0 / self.hessian_diag_estimate()
            return lambda q: inv_diag * q
        import scipy.sparse
        import scipy.sparse.linalg

        rho = getattr(self, "_last_rho", None)
        lik = 0.5 * np.clip(rho.reshape(-1), 0.05, 1e8) if rho is not None \
            else np.full(self.n_modes, 0.5)
        n = self.n_modes
        eye = scipy.sparse.identity(n)
        lu_t = scipy.sparse.linalg.splu(
            (q_tau + scipy.sparse.diags(lik)).tocsc())
        lu_d = scipy.sparse.linalg.splu(
            (q_mu + scipy.sparse.diags(lik) + eye * self.priors.ridge).tocsc())

        def apply(q):
            out = np.empty_like(q)
            out[:n] = lu_t.solve(q[:n])
            out[n:] = lu_d.solve(q[n:])
            return out

        return apply

    def _prior_value(self, tau_flat, delta_flat) -> float:
        return self.priors.tau_energy(tau_flat) + self.priors.delta_energy(delta_flat)

    def value(self, x: np.ndarray) -> float:
        tau, delta = self.unpack(x)
        return self.hamiltonian(tau.reshape(self.grid.shape),
                                delta.reshape(self.grid.shape))

    def value_and_grad(self, x: np.ndarray) -> tuple[float, np.ndarray]:
        tau, delta = self.unpack(x)
        shape = self.grid.shape
        f = self.hamiltonian(tau.reshape(shape), delta.reshape(shape))
        gt, gd = self.gradient(tau.reshape(shape), delta.reshape(shape))
        return f, self.pack(gt, gd)

    # subclasses provide hamiltonian / gradient / likelihood curvature pieces
    def hamiltonian(self, tau, delta) -> float:
        raise NotImplementedError

    def gradient(self, tau, delta) -> tuple[np.ndarray, np.ndarray]:
        raise NotImplementedError

    def likelihood_curvature_diag(self, params: SpectralParams) -> np.ndarray:
        raise NotImplementedError

    def initial_point(self) -> np.ndarray:
        raise NotImplementedError


class PerfectDataProblem(_SpectralProblem):
    """Infer the spectrum from a complete noiseless field realization."""

    def __init__(self, phi: Field, hyper: SmoothnessHyper,
                 nu: float = 0.5 * np.pi, epsilon: float = 1e-3,
                 params: SpectralParams | None = None):
        super().__init__(phi.grid, hyper, nu, epsilon)
        self.phi = phi
        self.periodogram = normalized_periodogram(phi)
        self.params = params

    def _log_power(self, tau, delta):
        return tau + np.tan(np.clip(delta, -self.bound, self.bound))

    def hamiltonian(self, tau, delta) -> float:
        lp = self._log_power(tau, delta)
        with np.errstate(over="ignore", under="ignore"):
            resid = self.periodogram * np.exp(-lp)
        lik = 0.5 * float(np.sum(resid + lp))
        return lik + self._prior_value(tau.reshape(-1), delta.reshape(-1))

    def gradient(self, tau, delta):
        delta_c = np.clip(delta, -self.bound, self.bound)
        lp = tau + np.tan(delta_c)
        with np.errstate(over="ignore", under="ignore"):
            rho = self.periodogram * np.exp(-lp)
        self._last_rho = rho
        bracket = 0.5 * (1.0 - rho)
        gt = bracket + self.priors.tau_grad(tau.reshape(-1)).reshape(tau.shape)
        gd = bracket / np.cos(delta_c) ** 2 \
            + self.priors.delta_grad(delta.reshape(-1)).reshape(delta.shape)
        return gt, gd

    def likelihood_curvature_diag(self, params: SpectralParams) -> np.ndarray:
        with np.errstate(over="ignore", under="ignore"):
            return self.periodogram * np.exp(-params.log_power())

    def initial_point(self) -> np.ndarray:
        p = self.periodogram
        floor = max(float(p.max()) * 1e-30, 1e-300)
        tau0 = np.log(np.maximum(p, floor))
        tau0 = smooth_over_radius(tau0, k_coords(self.grid).radius())
        tau0 = _prior_consistent_start(tau0, self.priors)
        return self.pack(tau0, np.zeros_like(tau0))


_EXP_CLIP = 600.0  # |log power| beyond this is clamped (numerics only;
# the marginal likelihood is asymptotically flat in that regime)


def _safe_power(lp: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    clipped = np.clip(lp, -_EXP_CLIP, _EXP_CLIP)
    return np.exp(clipped), np.exp(-clipped)


class _DenseState:
    """Factorized dense D^-1 for one parameter point (under the cap)."""

    def __init__(self, problem: "NoisyDataProblem", inv_power: np.ndarray):
        grid = problem.grid
        a = harmonic_kernel_matrix(grid, inv_power)
        idx = np.arange(grid.n_cells)
        a[idx, idx] += problem.mask_diag * problem.noise_weight
        self.chol, self.low = scipy.linalg.cho_factor(a, lower=True, check_finite=False)
        self.logdet_dinv = 2.0 * float(np.sum(np.log(np.diag(self.chol))))
        self.m = scipy.linalg.cho_solve((self.chol, self.low), problem.j,
                                        check_finite=False)

    def harmonic_diag(self, grid: RegularGrid) -> np.ndarray:
        if getattr(self, "_diag", None) is None:
            inv, info = scipy.linalg.lapack.dpotri(self.chol, lower=1)
            if info != 0:
                raise scipy.linalg.LinAlgError(f"dpotri failed with info={info}")
            full = np.tril(inv) + np.tril(inv, -1).T
            self._diag = dense_harmonic_diag(grid, full).real
        return self._diag


class _ProbeState:
    """CG/probe-based quantities for one parameter point (above the cap).

    The posterior-mean solve and the stochastic log-determinant happen on
    construction (needed by every Hamiltonian evaluation); the probe
    estimate of the harmonic diagonal of D is added lazily so line-search
    evaluations stay cheap and the accepted point reuses the same state.
    """

    def __init__(self, problem: "NoisyDataProblem", inv_power: np.ndarray,
                 need_diag: bool, need_logdet: bool):
        self.problem = problem
        grid = problem.grid
        shape = grid.shape
        inv_p = inv_power
        mask = problem.mask_shaped
        cw = problem.noise_weight

        def apply_block(x):
            h = np.fft.fftn(x.reshape(shape + (-1,)), axes=problem._axes)
            h *= inv_p[..., None]
            out = np.fft.ifftn(h, axes=problem._axes).real
            out += cw * mask[..., None] * x.reshape(shape + (-1,))
            return out.reshape(x.shape)

        self.apply_block = apply_block
        # mean-mask diagonal-harmonic preconditioner
        f_obs = problem.mask_diag.mean()
        prec = 1.0 / (inv_p + cw * f_obs)

        def precond_block(x):
            h = np.fft.fftn(x.reshape(shape + (-1,)), axes=problem._axes)
            h *= prec[..., None]
            return np.fft.ifftn(h, axes=problem._axes).real.reshape(x.shape)

        self.precond_block = precond_block
        warm_m = getattr(problem, "_warm_m", None)
        self.m = _block_cg(apply_block, problem.j[:, None], precond_block,
                           rel_tol=problem.cg.rel_tolerance,
                           max_iters=problem.cg_max_iters,
                           x0=warm_m)[:, 0]
        problem._warm_m = self.m[:, None].copy()
        self.logdet_dinv = None
        if need_logdet:
            self.logdet_dinv = _slq_logdet(apply_block, problem.probes,
                                           problem.lanczos_steps)
        self._diag = None
        if need_diag:
            self.ensure_diag()

    def ensure_diag(self):
        if self._diag is not None:
            return
        problem = self.problem
        grid = problem.grid
        shape = grid.shape
        z = problem.probes
        # moderate tolerance: the 64-probe estimator noise dominates
        x = _block_cg(self.apply_block, z, self.precond_block,
                      rel_tol=max(problem.cg.rel_tolerance, 1e-5),
                      max_iters=problem.cg_max_iters,
                      x0=getattr(problem, "_warm_probe_x", None))
        problem._warm_probe_x = x.copy()
        fz = np.fft.fftn(z.reshape(shape + (-1,)), axes=problem._axes)
        fx = np.fft.fftn(x.reshape(shape + (-1,)), axes=problem._axes)
        est = np.mean(np.conj(fz) * fx, axis=-1).real
        self._diag = est * (grid.cell_volume / grid.total_volume)

    def harmonic_diag(self, grid: RegularGrid) -> np.ndarray:
        self.ensure_diag()
        return self._diag


class NoisyDataProblem(_SpectralProblem):
    """Infer the spectrum from masked observations with white Gaussian noise.

    d has one entry per observed cell (R.extract order); noise_sigma is the
    noise standard deviation.  Dense factorizations are used while the grid
    is within dense_cap cells; larger problems switch to fixed Rademacher
    probes (n_probes) for the harmonic diagonal of D and a stochastic
    Lanczos estimate for log|D| (flagged approximate in `meta`).
    """

    def __init__(self, d: np.ndarray, R: MaskResponseOp, noise_sigma: float,
                 hyper: SmoothnessHyper, nu: float = 0.5 * np.pi,
                 epsilon: float = 1e-3, dense_cap: int = DEFAULT_DENSE_CAP,
                 n_probes: int = DEFAULT_N_PROBES, probe_seed: int = 2024,
                 lanczos_steps: int = 25, cg: CGConfig | None = None,
                 params: SpectralParams | None = None):
        super().__init__(R.grid, hyper, nu, epsilon)
        d = np.asarray(d, dtype=np.float64).reshape(-1)
        if d.size != R.n_observed:
            raise ValueError(
                f"data length {d.size} != observed cells {R.n_observed}"
            )
        if noise_sigma <= 0.0:
            raise ValueError("noise_sigma must be positive for the marginal model")
        self.d = d
        self.R = R
        self.noise_sigma = float(noise_sigma)
        self.dense_cap = int(dense_cap)
        self.n_probes = int(n_probes)
        self.lanczos_steps = int(lanczos_steps)
        self.cg = cg or CGConfig(rel_tolerance=1e-8)
        self.cg_max_iters = self.cg.max_iters or 10 * self.n_modes
        self.params = params

        grid = self.grid
        self._axes = tuple(range(grid.ndim))
        self.mask_diag = R.diagonal()
        self.mask_shaped = self.mask_diag.reshape(grid.shape)
        # R' N^-1 R = mask / (sigma^2 * cell_volume) in the field inner product
        self.noise_weight = 1.0 / (self.noise_sigma**2 * grid.cell_volume)
        self.j = R.inject(d) * self.noise_weight
        self.dense = grid.n_cells <= self.dense_cap
        rng = np.random.default_rng(probe_seed)
        self.probes = (rng.integers(0, 2, size=(grid.n_cells, self.n_probes)) * 2.0
                       - 1.0) if not self.dense else None
        self.meta = {"approximate_logdet": not self.dense}
        self._cache_key = None
        self._cache_state = None

    # -- per-point solver state ------------------------------------------
    def _state(self, inv_power: np.ndarray, need_diag: bool):
        key = inv_power.tobytes()
        if self._cache_key == key:
            state = self._cache_state
            if need_diag and isinstance(state, _ProbeState):
                state.ensure_diag()
            return state
        if self.dense:
            state = _DenseState(self, inv_power)
        else:
            state = _ProbeState(self, inv_power, need_diag=need_diag, need_logdet=True)
        self._cache_key = key
        self._cache_state = state
        return state

    def _log_power(self, tau, delta):
        return tau + np.tan(np.clip(delta, -self.bound, self.bound))

    def hamiltonian(self, tau, delta) -> float:
        lp = self._log_power(tau, delta)
        _, inv_power = _safe_power(lp)
        try:
            state = self._state(inv_power, need_diag=False)
        except (scipy.linalg.LinAlgError, CGError):
            return np.inf  # wildly off trial point; line search backs off
        j_dot_m = self.grid.cell_volume * float(self.j @ state.m)
        lik = 0.5 * (float(np.sum(lp)) + state.logdet_dinv - j_dot_m)
        return lik + self._prior_value(tau.reshape(-1), delta.reshape(-1))

    def gradient(self, tau, delta):
        delta_c = np.clip(delta, -self.bound, self.bound)
        lp = tau + np.tan(delta_c)
        power, inv_power = _safe_power(lp)
        state = self._state(inv_power, need_diag=True)
        d_kk = state.harmonic_diag(self.grid)
        m_shaped = state.m.reshape(self.grid.shape)
        m_hat2 = np.abs(np.fft.fftn(m_shaped) * self.grid.cell_volume) ** 2 \
            / self.grid.total_volume
        rho = (d_kk + m_hat2) / power
        self._last_rho = rho
        bracket = 0.5 * (1.0 - rho)
        gt = bracket + self.priors.tau_grad(tau.reshape(-1)).reshape(tau.shape)
        gd = bracket / np.cos(delta_c) ** 2 \
            + self.priors.delta_grad(delta.reshape(-1)).reshape(delta.shape)
        return gt, gd

    def likelihood_curvature_diag(self, params: SpectralParams) -> np.ndarray:
        power, inv_power = _safe_power(params.log_power())
        state = self._state(inv_power, need_diag=True)
        d_kk = state.harmonic_diag(self.grid)
        m_shaped = state.m.reshape(self.grid.shape)
        m_hat2 = np.abs(np.fft.fftn(m_shaped) * self.grid.cell_volume) ** 2 \
            / self.grid.total_volume
        return (d_kk + m_hat2) / power

    def initial_point(self) -> np.ndarray:
        zero_filled = Field(self.grid, self.R.inject(self.d).reshape(self.grid.shape))
        p = normalized_periodogram(zero_filled)
        floor = self.noise_sigma**2 * self.grid.cell_volume
        tau0 = np.log(np.maximum(p, floor))
        tau0 = smooth_over_radius(tau0, k_coords(self.grid).radius())
        tau0 = _prior_consistent_start(tau0, self.priors)
        return self.pack(tau0, np.zeros_like(tau0))

    def dinv_operator(self, params: SpectralParams) -> LinOp:
        """D^-1 = Phi^-1 + R' N^-1 R as a real-space operator."""
        return _DinvOp(self, params.power())

    def phi_preconditioner(self, params: SpectralParams) -> LinOp:
        """Mean-mask curvature preconditioner, diagonal in harmonic space."""
        f_obs = self.mask_diag.mean()
        prec = 1.0 / (1.0 / params.power() + self.noise_weight * f_obs)
        return DiagonalHarmonicOp(self.grid, prec)


class _DinvOp(LinOp):
    def __init__(self, problem: NoisyDataProblem, power: np.ndarray):
        self.problem = problem
        with np.errstate(divide="ignore"):
            self.inv_p = np.exp(np.clip(-np.log(power), -_EXP_CLIP, _EXP_CLIP))
        n = problem.grid.n_cells
        self.shape = (n, n)

    def apply(self, x):
        pr = self.problem
        v = x.reshape(pr.grid.shape)
        out = np.fft.ifftn(self.inv_p * np.fft.fftn(v)).real
        out += pr.noise_weight * pr.mask_shaped * v
        return out.reshape(x.shape)

    def adjoint_apply(self, y):
        return self.apply(y)

    @property
    def self_adjoint(self):
        return True


# -- spec-level convenience entry points ---------------------------------

def perfect_hamiltonian(prob: PerfectDataProblem) -> float:
    return prob.hamiltonian(prob.params.tau, prob.params.delta)


def perfect_gradient(prob: PerfectDataProblem):
    return prob.gradient(prob.params.tau, prob.params.delta)


def marginal_hamiltonian(prob: NoisyDataProblem) -> float:
    return prob.hamiltonian(prob.params.tau, prob.params.delta)


def marginal_gradient(prob: NoisyDataProblem):
    return prob.gradient(prob.params.tau, prob.params.delta)


def transformed_hamiltonian(problem: _SpectralProblem, tau: np.ndarray,
                            tan_delta: np.ndarray) -> float:
    """Hamiltonian in (tau, tan delta) variables, Jacobian term included."""
    delta = np.arctan(tan_delta)
    return problem.hamiltonian(tau, delta) + float(np.sum(np.log1p(tan_delta**2)))


# -- optimizer -------------------------------------------------------------

@dataclass
class OptimizerConfig:
    max_iters: int = 2000
    grad_tol: float | None = None  # default 1e-6 * n_modes
    memory: int = 10
    armijo_c1: float = 1e-4
    max_linesearch: int = 40
    alternating: bool = False
    alternating_iters: int = 150


@dataclass
class MapResult:
    tau_bar: np.ndarray
    delta_bar: np.ndarray
    hamiltonian_trace: list[float]
    converged: bool
    iterations: int
    grad_inf_norm: float
    uncertainty_log_spectrum: np.ndarray | None = None
    meta: dict = field(default_factory=dict)


def _two_loop(g, s_list, y_list, h0_apply):
    q = g.copy()
    alphas = []
    for s, y in zip(reversed(s_list), reversed(y_list)):
        rho = 1.0 / (y @ s)
        a = rho * (s @ q)
        alphas.append(a)
        q -= a * y
    q = h0_apply(q)
    for (s, y), a in zip(zip(s_list, y_list), reversed(alphas)):
        rho = 1.0 / (y @ s)
        b = rho * (y @ q)
        q += (a - b) * s
    return q


def _cubic_step(alpha0, phi0, dphi0, alpha1, phi1):
    # minimizer of the quadratic through (0, phi0, dphi0) and (alpha1, phi1)
    denom = 2.0 * (phi1 - phi0 - dphi0 * alpha1)
    if denom <= 0:
        return 0.5 * alpha1
    cand = -dphi0 * alpha1**2 / denom
    return float(np.clip(cand, 0.1 * alpha1, 0.5 * alpha1))


def minimize_map(problem: _SpectralProblem,
                 config: OptimizerConfig | None = None,
                 x0: np.ndarray | None = None) -> MapResult:
    """Projected L-BFGS minimization of the problem Hamiltonian.

    The Hamiltonian trace over accepted steps is non-increasing by
    construction (Armijo acceptance on projected trial points).  Convergence
    is declared when the projected-gradient infinity norm drops below
    grad_tol; on repeated line-search failure the best point so far is
    returned with converged=False.
    """
    cfg = config or OptimizerConfig()
    tol = cfg.grad_tol if cfg.grad_tol is not None else 1e-6 * problem.n_modes

    x = problem.project(x0 if x0 is not None else problem.initial_point())
    f, g = problem.value_and_grad(x)
    trace = [f]

    def proj_grad_norm(xv, gv):
        return float(np.max(np.abs(xv - problem.project(xv - gv))))

    pg = proj_grad_norm(x, g)
    if pg < tol:
        result = MapResult(*_unpack_shaped(problem, x), trace, True, 0, pg)
        problem.params = problem.make_params(result.tau_bar, result.delta_bar)
        return result

    tau_only_left = cfg.alternating_iters if cfg.alternating else 0
    s_mem: list[np.ndarray] = []
    y_mem: list[np.ndarray] = []
    converged = False
    it = 0
    restarts_left = 2

    h0_apply = problem.initial_inverse_hessian()
    h0_age = 0
    while it < cfg.max_iters:
        it += 1
        h0_age += 1
        if h0_age >= 25:
            # refresh the metric; old curvature pairs no longer match it
            h0_apply = problem.initial_inverse_hessian()
            h0_age = 0
            s_mem.clear()
            y_mem.clear()
        g_eff = g.copy()
        if tau_only_left > 0:
            g_eff[problem.n_modes:] = 0.0
        d = -_two_loop(g_eff, s_mem, y_mem, h0_apply)
        if tau_only_left > 0:
            d[problem.n_modes:] = 0.0
        dg = float(d @ g_eff)
        if dg >= 0.0:
            s_mem.clear()
            y_mem.clear()
            d = -h0_apply(g_eff)
            dg = float(d @ g_eff)

        alpha = 1.0
        accepted = False
        x_new = x
        for _ in range(cfg.max_linesearch):
            x_try = problem.project(x + alpha * d)
            step = x_try - x
            f_try = problem.value(x_try)
            if np.isfinite(f_try) and f_try <= f + cfg.armijo_c1 * float(g @ step):
                accepted = True
                x_new = x_try
                break
            alpha = _cubic_step(0.0, f, dg, alpha, f_try if np.isfinite(f_try) else f + abs(f))
        if not accepted:
            if restarts_left > 0 and (s_mem or tau_only_left > 0):
                restarts_left -= 1
                s_mem.clear()
                y_mem.clear()
                tau_only_left = 0
                continue
            break

        g_prev, x_prev = g, x
        x = x_new
        f, g = problem.value_and_grad(x)
        trace.append(f)
        s = x - x_prev
        y = g - g_prev
        sy = float(s @ y)
        if sy > 1e-12 * float(np.linalg.norm(s) * np.linalg.norm(y)):
            s_mem.append(s)
            y_mem.append(y)
            if len(s_mem) > cfg.memory:
                s_mem.pop(0)
                y_mem.pop(0)
        if tau_only_left > 0:
            tau_only_left -= 1
            if tau_only_left == 0:
                s_mem.clear()
                y_mem.clear()
        pg = proj_grad_norm(x, g)
        if pg < tol:
            converged = True
            break

    tau_bar, delta_bar = _unpack_shaped(problem, x)
    result = MapResult(tau_bar, delta_bar, trace, converged, it, pg)
    problem.params = problem.make_params(tau_bar, delta_bar)
    return result


def _unpack_shaped(problem, x):
    tau, delta = problem.unpack(x)
    shape = problem.grid.shape
    return tau.reshape(shape).copy(), delta.reshape(shape).copy()


# -- Laplace uncertainty ----------------------------------------------------

class _InverseViaCG(LinOp):
    def __init__(self, op: LinOp, cfg: CGConfig):
        self.op = op
        self.cfg = cfg
        self.shape = op.shape

    def apply(self, x):
        return cg_solve(self.op, x, self.cfg).x

    adjoint_apply = apply

    @property
    def self_adjoint(self):
        return True


def curvature_uncertainty(result: MapResult, problem: _SpectralProblem,
                          cap: int = DEFAULT_DENSE_CAP,
                          n_probes: int = DEFAULT_N_PROBES,
                          probe_seed: int = 7) -> np.ndarray:
    """One-sigma uncertainty of the log-spectrum from the Laplace curvature.

    Builds the second-derivative blocks of the Hamiltonian in the
    (tau, tan delta) variables at the MAP point, inverts them (dense at desk
    scale, probe-estimated above the cap), and returns per mode
    sqrt(diag(A_tau^-1) + diag(A_tan^-1)).  Sets result.meta flags when a
    non-positive curvature forced a pseudo-inverse and notes that the
    Gaussian approximation underestimates uncertainty in low-power regions.
    """
    params = problem.make_params(result.tau_bar, result.delta_bar)
    rho = problem.likelihood_curvature_diag(params).reshape(-1)
    n = problem.n_modes
    delta = params.delta.reshape(-1)
    t = np.tan(delta)
    cos2 = np.cos(delta) ** 2

    prior_tau = problem.priors.tau_prec
    prior_del = problem.priors.mu_prec
    ridge = problem.priors.ridge
    q_delta_diagcorr = -2.0 * np.sin(delta) * np.cos(delta) ** 3 * (
        prior_del.apply(delta) + ridge * delta
    ) + 2.0 * (1.0 - t**2) / (1.0 + t**2) ** 2

    flags = {"gaussian_approximation": True,
             "underestimates_low_power_uncertainty": True}

    def invert_diag(build_dense, apply_op, shape_n):
        if shape_n <= cap:
            mat = build_dense()
            try:
                c, low = scipy.linalg.cho_factor(mat, lower=True, check_finite=False)
                inv, info = scipy.linalg.lapack.dpotri(c, lower=1)
                if info != 0:
                    raise scipy.linalg.LinAlgError("dpotri failed")
                inv = np.tril(inv) + np.tril(inv, -1).T
            except scipy.linalg.LinAlgError:
                flags["non_positive_curvature"] = True
                inv = np.linalg.pinv(mat, hermitian=True)
            return np.diag(inv).copy()
        flags["probe_estimated_uncertainty"] = True
        op = _OpFromApply(apply_op, shape_n)
        inv_op = _InverseViaCG(op, CGConfig(rel_tolerance=1e-6))
        rng = np.random.default_rng(probe_seed)
        acc = np.zeros(shape_n)
        for _ in range(n_probes):
            z = rng.integers(0, 2, size=shape_n) * 2.0 - 1.0
            acc += z * inv_op.apply(z)
        return acc / n_probes

    def dense_tau():
        mat = _dense_of(prior_tau, n)
        idx = np.arange(n)
        mat[idx, idx] += 0.5 * rho
        return mat

    def apply_tau(x):
        return 0.5 * rho * x + prior_tau.apply(x)

    def dense_tan():
        q = _dense_of(prior_del, n)
        idx = np.arange(n)
        q[idx, idx] += ridge
        mat = (cos2[:, None] * q) * cos2[None, :]
        mat[idx, idx] += 0.5 * rho + q_delta_diagcorr
        return mat

    def apply_tan(x):
        inner = prior_del.apply(cos2 * x) + ridge * (cos2 * x)
        return cos2 * inner + (0.5 * rho + q_delta_diagcorr) * x

    diag_tau = invert_diag(dense_tau, apply_tau, n)
    diag_tan = invert_diag(dense_tan, apply_tan, n)
    total = diag_tau + diag_tan
    if np.any(total < 0.0):
        flags["non_positive_curvature"] = True
        total = np.maximum(total, 0.0)
    result.meta.update(flags)
    sqrt_o = np.sqrt(total).reshape(problem.grid.shape)
    result.uncertainty_log_spectrum = sqrt_o
    return sqrt_o


class _OpFromApply(LinOp):
    def __init__(self, fn, n):
        self._fn = fn
        self.shape = (n, n)

    def apply(self, x):
        return self._fn(x)

    adjoint_apply = apply

    @property
    def self_adjoint(self):
        return True


def _dense_of(op: LinOp, n: int) -> np.ndarray:
    if hasattr(op, "to_dense"):
        return op.to_dense()
    if hasattr(op, "ops"):  # SumOp of sparse/zero parts
        out = np.zeros((n, n))
        for w, sub in zip(op.weights, op.ops):
            out += w * _dense_of(sub, n)
        return out
    from .operators import dense_materialize

    return dense_materialize(op, cap=n)


# -- empirical-Bayes field reconstruction -----------------------------------

@dataclass
class Reconstruction:
    mean: Field
    uncertainty: Field
    meta: dict = field(default_factory=dict)


def wiener_reconstruct(problem: NoisyDataProblem, params: SpectralParams,
                       cg: CGConfig | None = None,
                       n_probes: int = DEFAULT_N_PROBES,
                       probe_seed: int = 99) -> Reconstruction:
    """Posterior mean D j and per-cell one-sigma sqrt(diag D) at fixed
    spectrum parameters (empirical Bayes: spectral uncertainty is ignored,
    so field uncertainties are underestimated)."""
    grid = problem.grid
    dinv = problem.dinv_operator(params)
    cfg = cg or CGConfig(rel_tolerance=1e-8,
                         preconditioner=problem.phi_preconditioner(params))
    if cfg.preconditioner is None:
        cfg.preconditioner = problem.phi_preconditioner(params)
    sol = cg_solve(dinv, problem.j, cfg)
    mean = Field(grid, sol.x.reshape(grid.shape))

    meta = {"cg_iterations": sol.iterations,
            "empirical_bayes_underestimates_uncertainty": True}
    if grid.n_cells <= problem.dense_cap:
        state = _DenseState(problem, _safe_power(params.log_power())[1])
        inv, info = scipy.linalg.lapack.dpotri(state.chol, lower=1)
        if info != 0:
            raise scipy.linalg.LinAlgError("dpotri failed")
        inv = np.tril(inv) + np.tril(inv, -1).T
        var = np.diag(inv).copy()
    else:
        meta["probe_estimated_uncertainty"] = True
        inv_op = _InverseViaCG(dinv, CGConfig(rel_tolerance=1e-6,
                                              preconditioner=cfg.preconditioner))
        rng = np.random.default_rng(probe_seed)
        var = np.zeros(grid.n_cells)
        for _ in range(n_probes):
            z = rng.integers(0, 2, size=grid.n_cells) * 2.0 - 1.0
            var += z * inv_op.apply(z)
        var /= n_probes
        var = np.maximum(var, 0.0)
    # operator matrix diagonal -> pointwise variance (kernel normalization)
    var /= grid.cell_volume
    unc = Field(grid, np.sqrt(var).reshape(grid.shape))
    return Reconstruction(mean, unc, meta)


# -- batched probe helpers ---------------------------------------------------

def _block_cg(apply_block, b, precond_block=None, rel_tol=1e-8, max_iters=10000,
              x0=None):
    """CG on multiple right-hand sides (columns of b) simultaneously."""
    if x0 is None:
        x = np.zeros_like(b)
        r = b.copy()
    else:
        x = x0.copy()
        r = b - apply_block(x)
    z = precond_block(r) if precond_block is not None else r.copy()
    p = z.copy()
    rz = np.einsum("ij,ij->j", r, z)
    b_norm = np.linalg.norm(b, axis=0)
    b_norm = np.where(b_norm == 0.0, 1.0, b_norm)
    for it in range(max_iters):
        ap = apply_block(p)
        pap = np.einsum("ij,ij->j", p, ap)
        if np.any(pap <= 0.0):
            raise CGError("operator not positive", iterations=it)
        alpha = rz / pap
        x += alpha * p
        r -= alpha * ap
        res = np.linalg.norm(r, axis=0) / b_norm
        if np.all(res <= rel_tol):
            return x
        z = precond_block(r) if precond_block is not None else r
        rz_new = np.einsum("ij,ij->j", r, z)
        p = z + (rz_new / rz) * p
        rz = rz_new
    raise CGError(f"block CG: no convergence within {max_iters} iterations",
                  residual=float(res.max()), iterations=max_iters)


def _slq_logdet(apply_block, probes, m_steps):
    """Stochastic Lanczos quadrature estimate of log det of an SPD operator.

    Tr(log A) ~ mean_z |z|^2 * sum_i w_i log(theta_i) over the Lanczos
    tridiagonal spectrum per probe, with full reorthogonalization.
    """
    n, q = probes.shape
    m_steps = min(m_steps, n)
    norms = np.linalg.norm(probes, axis=0)
    v = probes / norms
    basis = np.zeros((m_steps, n, q))
    basis[0] = v
    alphas = np.zeros((m_steps, q))
    betas = np.zeros((max(m_steps - 1, 0), q))
    v_prev = np.zeros_like(v)
    beta_prev = np.zeros(q)
    for i in range(m_steps):
        w = apply_block(v)
        alpha = np.einsum("ij,ij->j", v, w)
        alphas[i] = alpha
        w = w - alpha * v - beta_prev * v_prev
        for k in range(i + 1):
            proj = np.einsum("ij,ij->j", basis[k], w)
            w -= proj * basis[k]
        if i == m_steps - 1:
            break
        beta = np.linalg.norm(w, axis=0)
        betas[i] = beta
        v_prev = v
        beta_prev = beta
        safe = np.where(beta > 1e-300, beta, 1.0)
        v = w / safe
        basis[i + 1] = v
    total = 0.0
    for col in range(q):
        mcol = m_steps
        for i in range(m_steps - 1):
            if betas[i, col] <= 1e-300:
                mcol = i + 1
                break
        tri = np.diag(alphas[:mcol, col])
        if mcol > 1:
            off = betas[:mcol - 1, col]
            tri += np.diag(off, 1) + np.diag(off, -1)
        theta, u = np.linalg.eigh(tri)
        theta = np.maximum(theta, 1e-300)
        total += norms[col] ** 2 * float(np.sum(u[0] ** 2 * np.log(theta)))
    return total / q
