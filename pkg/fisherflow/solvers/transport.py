"""
Dynamic (Benamou-Brenier type) computation of the mobility transport distance.

Densities live on cell centers at Ns + 1 time slices of s in [0, 1]; fluxes live
on the N + 1 faces at the Ns half-steps, zero on the two boundary faces. The
action sum w^2 / m(rho) dx ds is minimized over paths satisfying the discrete
continuity equation by a primal-dual (Chambolle-Pock) iteration: the dual step
applies the per-face proximal map of the action, the primal step projects onto
the continuity constraint with a separable space-time Poisson solve.
"""

import math
import warnings
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np
from scipy.linalg import eigh_tridiagonal

from fisherflow.config.settings import (
    POWER_ITERATIONS, PROX_TOL, STEP_SAFETY, TRANSPORT_MAX_ITER, TRANSPORT_TOL
)
from fisherflow.errors import GridMismatch, InnerDivergence, MassMismatch, NoConvergence
from fisherflow.model.grid import DensityField, Grid1D
from fisherflow.model.mobility import Mobility
from fisherflow.solvers.prox import action_density, prox_action


def default_time_slices(cells: int) -> int:
    return max(16, cells // 8)


@dataclass
class TransportOptions:
    tol: float = TRANSPORT_TOL
    max_iter: int = TRANSPORT_MAX_ITER
    time_slices: Optional[int] = None
    check_every: int = 10
    prox_tol: float = PROX_TOL
    strict: bool = True
    verbose: bool = False


@dataclass
class TransportStats:
    iterations: int = 0
    converged: bool = False
    primal_residual: float = math.inf
    dual_residual: float = math.inf
    continuity_residual: float = math.inf
    residual_history: List[Tuple[int, float, float, float]] = field(default_factory=list)
    action_history: List[float] = field(default_factory=list)

    def as_dict(self):
        return {
            'iterations': self.iterations,
            'converged': self.converged,
            'primal_residual': self.primal_residual,
            'dual_residual': self.dual_residual,
            'continuity_residual': self.continuity_residual,
        }


@dataclass
class TransportPath:
    """Staggered space-time path: u is (Ns+1) x N, w is Ns x (N+1)."""
    grid: Grid1D
    u: np.ndarray
    w: np.ndarray
    action: float = math.nan
    dual: Optional[np.ndarray] = None
    stats: TransportStats = field(default_factory=TransportStats)
    solver_state: Optional[Tuple[np.ndarray, np.ndarray]] = field(default=None, repr=False)

    @property
    def time_slices(self) -> int:
        return self.w.shape[0]

    @property
    def ds(self) -> float:
        return 1.0 / self.time_slices

    def face_density(self) -> np.ndarray:
        return face_density(self.u)

    def interior_flux(self) -> np.ndarray:
        return self.w[:, 1:-1]


# Space-time operators

def face_density(u: np.ndarray) -> np.ndarray:
    """rho on interior faces at half-steps: mean of the four surrounding cell/slice values."""
    return 0.25 * (u[:-1, :-1] + u[:-1, 1:] + u[1:, :-1] + u[1:, 1:])


def _apply_k(u: np.ndarray, w: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    return face_density(u), w[:, 1:-1].copy()


def _apply_kt(y_rho: np.ndarray, y_omega: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    slices, inner = y_rho.shape
    cells = inner + 1
    spread = np.zeros((slices, cells))
    spread[:, :-1] += y_rho
    spread[:, 1:] += y_rho
    du = np.zeros((slices + 1, cells))
    du[:-1] += 0.25 * spread
    du[1:] += 0.25 * spread
    dw = np.zeros((slices, cells + 1))
    dw[:, 1:-1] = y_omega
    return du, dw


def continuity_defect(u: np.ndarray, w: np.ndarray, dx: float) -> np.ndarray:
    slices = w.shape[0]
    return (u[1:] - u[:-1]) * slices + (w[:, 1:] - w[:, :-1]) / dx


def continuity_residual(path: TransportPath) -> float:
    """Max over cells and half-steps of |(u^{j+1} - u^j)/ds + (w_{i+1/2} - w_{i-1/2})/dx|."""
    return float(np.max(np.abs(continuity_defect(path.u, path.w, path.grid.dx))))


def action(path: TransportPath, m: Mobility, atol: float = 0.0) -> float:
    """Discrete action sum A(rho, w) dx ds over interior faces; +inf off the domain of A."""
    density = action_density(path.face_density(), path.interior_flux(), m, atol)
    if not np.all(np.isfinite(density)):
        return math.inf
    return float(np.sum(density)) * path.grid.dx * path.ds


def _neumann_eigen(size: int, h: float):
    diag = np.full(size, 2.0)
    diag[0] = diag[-1] = 1.0
    if size == 1:
        diag[0] = 0.0
        return np.zeros(1), np.ones((1, 1))
    lam, vectors = eigh_tridiagonal(diag, np.full(size - 1, -1.0))
    return lam / (h * h), vectors


def constant_path(u: DensityField, slices: int) -> TransportPath:
    grid = u.grid
    path = TransportPath(grid=grid, u=np.tile(u.values, (slices + 1, 1)),
                         w=np.zeros((slices, grid.cells + 1)), action=0.0)
    path.dual = np.zeros_like(path.u)
    path.stats = TransportStats(converged=True, primal_residual=0.0, dual_residual=0.0,
                                continuity_residual=0.0)
    return path


def linear_path(u0: DensityField, u1: DensityField, slices: int) -> Tuple[np.ndarray, np.ndarray]:
    """Linear interpolation in u with the constant-in-s flux that makes it feasible."""
    grid = u0.grid
    frac = np.linspace(0.0, 1.0, slices + 1)[:, None]
    u = (1.0 - frac) * u0.values[None, :] + frac * u1.values[None, :]
    flux = np.zeros(grid.cells + 1)
    flux[1:] = -grid.dx * np.cumsum(u1.values - u0.values)
    flux[-1] = 0.0
    return u, np.tile(flux, (slices, 1))


class TransportSolver:
    """Primal-dual solver for one (grid, time slices, mobility) combination.

    Instances hold precomputed spectral data for the continuity projection;
    a solver is used by one thread at a time.
    """

    def __init__(self, grid: Grid1D, m: Mobility, opts: Optional[TransportOptions] = None):
        self.grid = grid
        self.mobility = m
        self.opts = opts or TransportOptions()
        self.slices = self.opts.time_slices or default_time_slices(grid.cells)
        if self.slices < 2:
            raise GridMismatch(f"transport needs at least 2 time slices, got {self.slices}")
        self.ds = 1.0 / self.slices
        lam_s, self._q_s = _neumann_eigen(self.slices, self.ds)
        lam_x, self._q_x = _neumann_eigen(grid.cells, grid.dx)
        den = lam_s[:, None] + lam_x[None, :]
        self._inv_den = np.where(den > 1e-12 * np.max(den), 1.0 / np.where(den > 0.0, den, 1.0), 0.0)
        self.norm = self._estimate_norm()
        self.step = STEP_SAFETY / self.norm

    def _estimate_norm(self) -> float:
        rng = np.random.default_rng(0)
        u = rng.standard_normal((self.slices + 1, self.grid.cells))
        w = rng.standard_normal((self.slices, self.grid.cells + 1))
        size = math.sqrt(float(np.sum(u * u) + np.sum(w * w)))
        u, w = u / size, w / size
        eigen = 1.0
        for _ in range(POWER_ITERATIONS):
            u, w = _apply_kt(*_apply_k(u, w))
            eigen = math.sqrt(float(np.sum(u * u) + np.sum(w * w)))
            u, w = u / eigen, w / eigen
        return max(math.sqrt(eigen), 1e-12)

    def project(self, u: np.ndarray, w: np.ndarray, u0: np.ndarray, u1: np.ndarray):
        """Euclidean projection onto the continuity set with endpoints u0, u1 and no-flux faces."""
        u = u.copy()
        w = w.copy()
        u[0], u[-1] = u0, u1
        w[:, 0] = 0.0
        w[:, -1] = 0.0
        defect = continuity_defect(u, w, self.grid.dx)
        y = self._q_s @ ((self._q_s.T @ defect @ self._q_x) * self._inv_den) @ self._q_x.T
        u[1:-1] -= (y[:-1] - y[1:]) / self.ds
        w[:, 1:-1] -= (y[:, :-1] - y[:, 1:]) / self.grid.dx
        return u, w

    def solve(self, u0: DensityField, u1: DensityField,
              init: Optional[TransportPath] = None) -> Tuple[float, TransportPath]:
        u0.same_grid(u1)
        if u0.grid != self.grid:
            raise GridMismatch(f"solver grid {self.grid} differs from field grid {u0.grid}")
        mass0, mass1 = u0.exact_mass(), u1.exact_mass()
        if abs(mass0 - mass1) > 1e-10 * (1.0 + abs(mass0)):
            raise MassMismatch(f"endpoint masses differ: {mass0:.17g} vs {mass1:.17g}")
        if np.array_equal(u0.values, u1.values):
            return 0.0, constant_path(u0, self.slices)

        m = self.mobility
        opts = self.opts
        dx, ds = self.grid.dx, self.ds
        sigma = tau = self.step

        if init is not None and init.u.shape == (self.slices + 1, self.grid.cells):
            u, w = self.project(init.u, init.w, u0.values, u1.values)
            y_rho, y_omega = init.solver_state if init.solver_state is not None else (None, None)
        else:
            u, w = self.project(*linear_path(u0, u1, self.slices), u0.values, u1.values)
            y_rho = y_omega = None
        if y_rho is None:
            y_rho, y_omega = _apply_k(u, w)
            y_rho, y_omega = np.zeros_like(y_rho), np.zeros_like(y_omega)

        scale = max(1.0, float(np.max(np.abs(u0.values))), float(np.max(np.abs(u1.values))))
        u_bar, w_bar = u, w
        stats = TransportStats()
        p_rho = p_omega = None
        for it in range(1, opts.max_iter + 1):
            k_rho, k_omega = _apply_k(u_bar, w_bar)
            z_rho = y_rho + sigma * k_rho
            z_omega = y_omega + sigma * k_omega
            p_rho, p_omega = prox_action(z_rho / sigma, z_omega / sigma, 1.0 / sigma, m, opts.prox_tol)
            y_rho_new = z_rho - sigma * p_rho
            y_omega_new = z_omega - sigma * p_omega

            kt_u, kt_w = _apply_kt(y_rho_new, y_omega_new)
            u_new, w_new = self.project(u - tau * kt_u, w - tau * kt_w, u0.values, u1.values)
            if not (np.all(np.isfinite(u_new)) and np.all(np.isfinite(y_rho_new))):
                raise InnerDivergence(f"transport iterates became non-finite at iteration {it}")

            stats.action_history.append(float(np.sum(action_density(p_rho, p_omega, m))) * dx * ds)

            if it % opts.check_every == 0 or it == opts.max_iter:
                du, dw = u - u_new, w - w_new
                dyr, dyo = y_rho - y_rho_new, y_omega - y_omega_new
                kt_du, kt_dw = _apply_kt(dyr, dyo)
                primal = math.sqrt(float(np.sum((du / tau - kt_du) ** 2) + np.sum((dw / tau - kt_dw) ** 2))
                                   / (du.size + dw.size))
                k_du, k_dw = _apply_k(du, dw)
                dual = math.sqrt(float(np.sum((dyr / sigma - k_du) ** 2) + np.sum((dyo / sigma - k_dw) ** 2))
                                 / (dyr.size + dyo.size))
                primal /= scale
                dual /= scale
                defect = float(np.max(np.abs(continuity_defect(u_new, w_new, dx))))
                stats.residual_history.append((it, primal, dual, defect))
                stats.primal_residual, stats.dual_residual = primal, dual
                stats.continuity_residual = defect
                if opts.verbose and it % (50 * opts.check_every) == 0:
                    print(f"[INFO] transport iteration {it}: primal={primal:.3e} dual={dual:.3e} "
                          f"continuity={defect:.3e} action={stats.action_history[-1]:.10g}")
                if max(primal, dual) <= opts.tol and defect <= opts.tol:
                    stats.converged = True

            u_bar, w_bar = 2.0 * u_new - u, 2.0 * w_new - w
            u, w = u_new, w_new
            y_rho, y_omega = y_rho_new, y_omega_new
            stats.iterations = it
            if stats.converged:
                break

        path = TransportPath(grid=self.grid, u=u, w=w, stats=stats, solver_state=(y_rho, y_omega))
        value = action(path, m, atol=opts.tol * scale)
        if not math.isfinite(value):
            warnings.warn("primal path leaves the domain of the action; reporting the proximal estimate")
            value = float(np.sum(action_density(p_rho, p_omega, m))) * dx * ds
        path.action = value
        path.dual = dual_potential(path, m)

        if not stats.converged:
            residuals = (stats.primal_residual, stats.dual_residual, stats.continuity_residual)
            if opts.strict:
                raise NoConvergence(stats.iterations, residuals)
            warnings.warn(f"transport solver stopped after {stats.iterations} iterations "
                          f"(residuals {residuals})")
        if opts.verbose:
            print(f"[INFO] transport: W^2 = {value:.12g} after {stats.iterations} iterations "
                  f"(converged={stats.converged})")
        return value, path


def solve_distance(u0: DensityField, u1: DensityField, m: Mobility,
                   opts: Optional[TransportOptions] = None,
                   init: Optional[TransportPath] = None) -> Tuple[float, TransportPath]:
    """W_m(u0, u1)^2 and the optimal discrete path."""
    return TransportSolver(u0.grid, m, opts).solve(u0, u1, init)


def _slice_potential(rho: np.ndarray, omega: np.ndarray, m: Mobility, dx: float) -> np.ndarray:
    mob = m.value(np.clip(rho, 0.0, m.ceiling))
    grad = np.where(mob > 0.0, omega / np.where(mob > 0.0, mob, 1.0), 0.0)
    phi = np.concatenate(([0.0], np.cumsum(dx * grad)))
    return phi - np.mean(phi)


def terminal_potential(path: TransportPath, m: Mobility) -> np.ndarray:
    """Gradient of W^2 / 2 with respect to the terminal density (cell values, zero mean).

    The potential of the last half-step, phi with d_face phi = w / m(rho), is
    corrected by the exact derivative of the last slab's action with respect
    to its terminal density.
    """
    dx, ds = path.grid.dx, path.ds
    rho = path.face_density()[-1]
    omega = path.interior_flux()[-1]
    phi = _slice_potential(rho, omega, m, dx)
    snapped = np.clip(rho, 0.0, m.ceiling)
    mob = m.value(snapped)
    positive = mob > 0.0
    safe = np.where(positive, snapped, 0.5 * m.reference_scale)
    with np.errstate(invalid='ignore', over='ignore'):
        slope = np.where(positive, omega * omega * m.derivative(safe) / np.where(positive, mob, 1.0) ** 2, 0.0)
    correction = np.zeros(path.grid.cells)
    correction[:-1] += slope
    correction[1:] += slope
    grad = phi - 0.125 * ds * correction
    return grad - np.mean(grad)


def dual_potential(path: TransportPath, m: Mobility) -> np.ndarray:
    """Potentials per slice: half-step j for slices 0..Ns-1, terminal gradient for slice Ns."""
    rho = path.face_density()
    omega = path.interior_flux()
    dual = np.empty_like(path.u)
    for j in range(path.time_slices):
        dual[j] = _slice_potential(rho[j], omega[j], m, path.grid.dx)
    dual[-1] = terminal_potential(path, m)
    return dual
