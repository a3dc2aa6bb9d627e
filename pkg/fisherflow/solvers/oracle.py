"""Implicit Euler integrator of the fourth-order flow for strictly positive smooth data.

Used only as an independent reference for the minimizing-movement scheme at small scale.
"""

import math
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np
from scipy import sparse
from scipy.sparse.linalg import spsolve

from fisherflow.config.settings import ORACLE_FLOOR_FACTOR, ORACLE_MAX_NEWTON, ORACLE_NEWTON_TOL
from fisherflow.errors import GridMismatch, NewtonFailure
from fisherflow.model.functionals import first_variation, fisher_energy, heat_entropy
from fisherflow.model.grid import DensityField, d_face, div_cell, face_average
from fisherflow.model.mobility import Mobility

_BANDWIDTH = 2
_MAX_HALVINGS = 30


def density_floor(u: DensityField) -> float:
    return ORACLE_FLOOR_FACTOR * u.exact_mass() / u.grid.length


def spatial_operator(u: DensityField, m: Mobility) -> np.ndarray:
    """div_cell(m(u_face) d_face(dF/du)); boundary fluxes vanish."""
    mu = first_variation(u, m)
    flux = d_face(u.grid, mu)
    flux[1:-1] *= m.value(face_average(u.values))
    return div_cell(u.grid, flux)


def _residual(v: np.ndarray, previous: DensityField, tau: float, m: Mobility) -> np.ndarray:
    return v - previous.values - tau * spatial_operator(previous.with_values(v), m)


def _jacobian(v: np.ndarray, base: np.ndarray, previous: DensityField, tau: float, m: Mobility):
    """Finite-difference Jacobian assembled by banded column coloring."""
    n = v.size
    colors = 2 * _BANDWIDTH + 1
    rows, cols, vals = [], [], []
    scale = max(float(np.mean(np.abs(v))), 1e-300)
    for color in range(colors):
        columns = np.arange(color, n, colors)
        h = math.sqrt(np.finfo(float).eps) * np.maximum(np.abs(v[columns]), scale)
        bumped = v.copy()
        bumped[columns] += h
        diff = _residual(bumped, previous, tau, m) - base
        for col, step in zip(columns, h):
            lo, hi = max(0, col - _BANDWIDTH), min(n, col + _BANDWIDTH + 1)
            rows.extend(range(lo, hi))
            cols.extend([col] * (hi - lo))
            vals.extend((diff[lo:hi] / step).tolist())
    return sparse.csc_matrix((vals, (rows, cols)), shape=(n, n))


def oracle_step(u: DensityField, tau: float, m: Mobility, floor: Optional[float] = None,
                tol: float = ORACLE_NEWTON_TOL, max_newton: int = ORACLE_MAX_NEWTON) -> DensityField:
    """One implicit Euler step solved by damped Newton; refuses degenerate data."""
    floor = density_floor(u) if floor is None else floor
    top = m.ceiling - floor
    if u.min < floor or u.max > top:
        raise NewtonFailure(f"oracle data outside [{floor:.3e}, {top:.3e}] "
                            f"(min {u.min:.3e}, max {u.max:.3e})")

    v = u.values.copy()
    res = _residual(v, u, tau, m)
    target = tol * (1.0 + float(np.max(np.abs(u.values))))
    for _ in range(max_newton):
        norm = float(np.max(np.abs(res)))
        if norm <= target:
            return u.with_values(v)
        step = spsolve(_jacobian(v, res, u, tau, m), -res)
        if not np.all(np.isfinite(step)):
            raise NewtonFailure("singular Newton system in the oracle step")
        lam = 1.0
        for _ in range(_MAX_HALVINGS):
            trial = v + lam * step
            if np.min(trial) >= floor and np.max(trial) <= top:
                trial_res = _residual(trial, u, tau, m)
                if float(np.max(np.abs(trial_res))) < norm:
                    break
            lam *= 0.5
        else:
            raise NewtonFailure("oracle line search could not keep the density above the floor")
        v, res = trial, trial_res
    if float(np.max(np.abs(res))) <= target:
        return u.with_values(v)
    raise NewtonFailure(f"oracle Newton did not converge in {max_newton} iterations "
                        f"(residual {float(np.max(np.abs(res))):.3e})")


@dataclass
class OracleRun:
    initial: DensityField
    tau: float
    mobility: Mobility
    steps: List[DensityField] = field(default_factory=list)

    def states(self) -> List[DensityField]:
        return list(self.steps)

    def state_at(self, t: float) -> DensityField:
        """Piecewise-constant interpolant: step n on ((n-1) tau, n tau], the initial datum at t = 0."""
        if t <= 0.0:
            return self.initial
        index = min(int(math.ceil(t / self.tau - 1e-9)), len(self.steps))
        return self.steps[index - 1]

    def rows(self):
        """Per-step table rows (step, t, F, H, W2_step, mass, min_u, max_u); W2_step is not defined here."""
        out = []
        for n, state in enumerate(self.steps, start=1):
            out.append((n, n * self.tau, fisher_energy(state, self.mobility),
                        heat_entropy(state, self.mobility), math.nan,
                        state.exact_mass(), state.min, state.max))
        return out


def oracle_run(u0: DensityField, tau: float, horizon: float, m: Mobility,
               floor: Optional[float] = None, verbose: bool = False) -> OracleRun:
    """ceil(T / tau) implicit Euler steps from u0."""
    count = max(1, int(math.ceil(horizon / tau - 1e-9)))
    floor = density_floor(u0) if floor is None else floor
    run = OracleRun(initial=u0, tau=tau, mobility=m)
    state = u0
    for n in range(1, count + 1):
        state = oracle_step(state, tau, m, floor)
        run.steps.append(state)
        if verbose and (n % 10 == 0 or n == count):
            print(f"[INFO] oracle step {n}/{count}: F = {fisher_energy(state, m):.12g}")
    return run


def compare(traj, reference, horizon: float) -> float:
    """Relative L2 difference ||u_traj(T) - u_ref(T)|| / ||u_ref(T)||."""
    if traj.initial.grid != reference.initial.grid:
        raise GridMismatch(f"cannot compare runs on {traj.initial.grid} and {reference.initial.grid}")
    a = traj.state_at(horizon).values
    b = reference.state_at(horizon).values
    return float(np.linalg.norm(a - b) / np.linalg.norm(b))
