"""Minimizing-movement scheme that orchestrates the transport solver and the energy functionals."""

import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy import sparse
from scipy.sparse.linalg import spsolve

from fisherflow.config.settings import MAX_HALVINGS, MONOTONICITY_FLOOR, OUTER_MAX_ITER, OUTER_TOL
from fisherflow.errors import InnerDivergence, StepRejected
from fisherflow.model.functionals import (
    clamp_interior, energy_breakdown, entropy_bound_ratio, first_variation, fisher_energy,
    heat_entropy, reference_point
)
from fisherflow.model.grid import DensityField, face_average, project_constraints
from fisherflow.model.mobility import Mobility, f_of, f_prime
from fisherflow.solvers.transport import (
    TransportOptions, TransportPath, TransportSolver, terminal_potential
)

METRIC = 'metric'
NONE = 'none'


@dataclass
class JkoOptions:
    tol_outer: float = OUTER_TOL
    max_outer: int = OUTER_MAX_ITER
    max_halvings: int = MAX_HALVINGS
    preconditioner: str = METRIC
    transport: TransportOptions = field(default_factory=lambda: TransportOptions(strict=False))
    raise_on_reject: bool = False
    deterministic: bool = False
    s0: Optional[float] = None
    verbose: bool = False


@dataclass
class StepRecord:
    index: int
    state: DensityField
    distance2: float
    fisher: float
    entropy: float
    objective: float
    accepted: bool = True
    outer_iterations: int = 0
    halvings: int = 0
    transport_iterations: int = 0
    transport_converged: bool = True


@dataclass
class JkoTrajectory:
    """Steps u^1, ..., u^N of the scheme; u_tau(t) = u^n for t in ((n-1) tau, n tau]."""
    tau: float
    mobility: Mobility
    initial: DensityField
    initial_energy: float
    initial_entropy: float
    s0: float
    eps_mono: float
    records: List[StepRecord] = field(default_factory=list)

    def states(self) -> List[DensityField]:
        return [r.state for r in self.records]

    def state_at(self, t: float) -> DensityField:
        if t <= 0.0 or not self.records:
            return self.initial
        index = min(int(math.ceil(t / self.tau - 1e-9)), len(self.records))
        return self.records[max(index, 1) - 1].state

    @property
    def horizon(self) -> float:
        return len(self.records) * self.tau

    @property
    def energies(self) -> np.ndarray:
        return np.array([self.initial_energy] + [r.fisher for r in self.records])

    @property
    def entropies(self) -> np.ndarray:
        return np.array([self.initial_entropy] + [r.entropy for r in self.records])

    @property
    def distances(self) -> np.ndarray:
        return np.array([r.distance2 for r in self.records])

    def rows(self, deterministic: bool = False):
        """(step, t, F, H, W2_step, mass, min_u, max_u), one row per accepted step."""
        return [(r.index, r.index * self.tau, r.fisher, r.entropy, r.distance2,
                 _mass(r.state, deterministic), r.state.min, r.state.max)
                for r in self.records]


def _mass(u: DensityField, deterministic: bool) -> float:
    return u.exact_mass() if deterministic else u.mass


def monotonicity_allowance(tol_outer: float, initial_energy: float) -> float:
    return max(MONOTONICITY_FLOOR, 10.0 * tol_outer) * (1.0 + initial_energy)


class JkoScheme:
    """Alternating transport-solve / endpoint-descent minimizer of W^2 / (2 tau) + F."""

    def __init__(self, m: Mobility, tau: float, opts: Optional[JkoOptions] = None):
        self.mobility = m
        self.tau = tau
        self.opts = opts or JkoOptions()
        self._solvers: Dict = {}

    def _solver(self, grid) -> TransportSolver:
        solver = self._solvers.get(grid)
        if solver is None:
            solver = TransportSolver(grid, self.mobility, self.opts.transport)
            self._solvers[grid] = solver
        return solver

    def _metric_matrix(self, u: DensityField):
        """P v = -div(m(u_face) d_face v), the linearized transport metric."""
        grid = u.grid
        n = grid.cells
        mob = self.mobility.value(np.clip(face_average(u.values), 0.0, self.mobility.ceiling))
        mob = mob / (grid.dx * grid.dx)
        diag = np.zeros(n)
        diag[:-1] += mob
        diag[1:] += mob
        return sparse.diags([diag, -mob, -mob], [0, -1, 1], format='csc')

    def _hessian_matrix(self, u: DensityField):
        """Gauss-Newton Hessian f'(u) (-d2) f'(u) of the Fisher energy."""
        grid = u.grid
        n = grid.cells
        fp = f_prime(self.mobility, clamp_interior(u.values, self.mobility))
        inv = 1.0 / (grid.dx * grid.dx)
        diag = np.full(n, 2.0 * inv)
        diag[0] = diag[-1] = inv
        lap = sparse.diags([diag, np.full(n - 1, -inv), np.full(n - 1, -inv)], [0, -1, 1], format='csc')
        scale = sparse.diags(fp)
        return scale @ lap @ scale

    def _direction(self, u: DensityField, gradient: np.ndarray) -> np.ndarray:
        if self.opts.preconditioner == NONE:
            return gradient
        metric = self._metric_matrix(u)
        system = sparse.identity(u.grid.cells, format='csc') + self.tau * (metric @ self._hessian_matrix(u))
        direction = spsolve(system.tocsc(), metric @ gradient)
        if not np.all(np.isfinite(direction)):
            return gradient
        return direction

    def _distance(self, u_prev: DensityField, u: DensityField,
                  init: Optional[TransportPath]) -> Tuple[float, TransportPath]:
        value, path = self._solver(u.grid).solve(u_prev, u, init)
        if not math.isfinite(value):
            raise InnerDivergence("transport distance is not finite for a candidate endpoint")
        return value, path

    def step(self, u_prev: DensityField, index: int = 1, s0: Optional[float] = None) -> StepRecord:
        """One minimizing-movement step from u_prev.

        The returned objective never exceeds F(u_prev); when no candidate
        decreases it, u_prev is returned with accepted=False.
        """
        m = self.mobility
        tau = self.tau
        opts = self.opts
        mass = u_prev.exact_mass()
        if s0 is None:
            s0 = reference_point(u_prev, m, opts.s0)
        energy_prev = fisher_energy(u_prev, m, opts.deterministic)

        u = u_prev
        path: Optional[TransportPath] = None
        distance2 = 0.0
        objective = energy_prev
        outer = halvings_total = transport_iterations = 0
        transport_converged = trials_converged = True
        moved = False

        gradient = first_variation(u_prev, m)
        neutral = gradient - np.mean(gradient)
        if float(np.max(np.abs(neutral))) <= 1e-14 * (1.0 + float(np.max(np.abs(gradient)))):
            return StepRecord(index, u_prev, 0.0, energy_prev, heat_entropy(u_prev, m, s0, opts.deterministic),
                              energy_prev, accepted=True)

        sigma = tau
        for outer in range(1, opts.max_outer + 1):
            if path is not None:
                gradient = terminal_potential(path, m) / tau + first_variation(u, m)
            direction = self._direction(u, gradient)
            improved = False
            for halving in range(opts.max_halvings + 1):
                trial = project_constraints(u.grid, u.values - sigma * direction, mass, m.ceiling)
                trial_d2, trial_path = self._distance(u_prev, trial, path)
                transport_iterations += trial_path.stats.iterations
                trials_converged = trials_converged and trial_path.stats.converged
                trial_objective = trial_d2 / (2.0 * tau) + fisher_energy(trial, m, opts.deterministic)
                if trial_objective < objective:
                    improved = True
                    halvings_total += halving
                    break
                sigma *= 0.5
            if not improved:
                break
            decrease = objective - trial_objective
            u, path, distance2, objective = trial, trial_path, trial_d2, trial_objective
            transport_converged = trial_path.stats.converged
            moved = True
            if opts.verbose:
                print(f"[INFO] step {index} outer {outer}: objective {objective:.12g} "
                      f"(decrease {decrease:.3e}, sigma {sigma:.3e})")
            if decrease <= opts.tol_outer * (1.0 + abs(objective)):
                break
            sigma = min(2.0 * sigma, tau)

        if not moved:
            if opts.raise_on_reject:
                raise StepRejected(f"step {index}: backtracking exhausted after {opts.max_halvings} halvings")
            print(f"[WARNING] step {index}: no descent found, keeping the previous state")
            return StepRecord(index, u_prev, 0.0, energy_prev, heat_entropy(u_prev, m, s0, opts.deterministic),
                              energy_prev, accepted=False, outer_iterations=outer,
                              halvings=opts.max_halvings, transport_iterations=transport_iterations,
                              transport_converged=trials_converged)

        return StepRecord(
            index=index,
            state=u,
            distance2=distance2,
            fisher=fisher_energy(u, m, opts.deterministic),
            entropy=heat_entropy(u, m, s0, opts.deterministic),
            objective=objective,
            accepted=True,
            outer_iterations=outer,
            halvings=halvings_total,
            transport_iterations=transport_iterations,
            transport_converged=transport_converged,
        )

    def run(self, u0: DensityField, horizon: float, on_step=None) -> JkoTrajectory:
        """ceil(T / tau) steps from u0 (a single step when T < tau)."""
        m = self.mobility
        opts = self.opts
        count = max(1, int(math.ceil(horizon / self.tau - 1e-9)))
        s0 = reference_point(u0, m, opts.s0)
        energy0 = fisher_energy(u0, m, opts.deterministic)
        traj = JkoTrajectory(
            tau=self.tau, mobility=m, initial=u0,
            initial_energy=energy0,
            initial_entropy=heat_entropy(u0, m, s0, opts.deterministic),
            s0=s0,
            eps_mono=monotonicity_allowance(opts.tol_outer, energy0),
        )
        if opts.verbose:
            print("=" * 60)
            print(f"[INFO] scheme: {m.describe()}, tau = {self.tau:g}, {count} steps, F(u0) = {energy0:.12g}")
            print("=" * 60)
        state = u0
        for n in range(1, count + 1):
            record = self.step(state, n, traj.s0)
            traj.records.append(record)
            state = record.state
            if on_step is not None:
                on_step(record)
            if opts.verbose:
                print(f"[INFO] step {n}/{count}: F = {record.fisher:.12g}, H = {record.entropy:.12g}, "
                      f"W2 = {record.distance2:.6e}, transport iterations = {record.transport_iterations}")
        return traj


def jko_step(u_prev: DensityField, tau: float, m: Mobility, opts: Optional[JkoOptions] = None):
    """Single step as a function: (u_next, record)."""
    record = JkoScheme(m, tau, opts).step(u_prev)
    return record.state, record


def run(u0: DensityField, tau: float, horizon: float, m: Mobility,
        opts: Optional[JkoOptions] = None) -> JkoTrajectory:
    return JkoScheme(m, tau, opts).run(u0, horizon)


# Diagnostics

@dataclass
class EstimateReport:
    checks: Dict[str, bool] = field(default_factory=dict)
    values: Dict[str, float] = field(default_factory=dict)
    dissipation_ratios: List[float] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(self.checks.values())

    def first_failure(self) -> Optional[str]:
        for name, ok in self.checks.items():
            if not ok:
                return name
        return None


def check_estimates(traj: JkoTrajectory) -> EstimateReport:
    """Energy and entropy monotonicity, the distance-sum bound, mass and bounds,
    plus the regularity norms and dissipation ratios (reported, not asserted)."""
    report = EstimateReport()
    m = traj.mobility
    eps = traj.eps_mono
    energies = traj.energies
    entropies = traj.entropies
    distances = traj.distances

    energy_jumps = np.diff(energies)
    entropy_jumps = np.diff(entropies)
    report.values['max_energy_increase'] = float(np.max(energy_jumps)) if energy_jumps.size else 0.0
    report.values['max_entropy_increase'] = float(np.max(entropy_jumps)) if entropy_jumps.size else 0.0
    report.checks['energy_monotone'] = report.values['max_energy_increase'] <= eps
    report.checks['entropy_monotone'] = report.values['max_entropy_increase'] <= eps

    bound = 2.0 * traj.tau * traj.initial_energy * (1.0 + eps)
    total_distance = float(np.sum(distances))
    report.values['distance_sum'] = total_distance
    report.values['distance_bound'] = bound
    report.values['distance_slack'] = bound - total_distance
    report.checks['distance_sum'] = total_distance <= bound

    mass0 = traj.initial.exact_mass()
    drift = max((abs(u.exact_mass() - mass0) for u in traj.states()), default=0.0)
    report.values['mass_drift'] = drift
    report.checks['mass'] = drift <= 1e-10 * (1.0 + abs(mass0))

    lowest = min((u.min for u in traj.states()), default=traj.initial.min)
    highest = max((u.max for u in traj.states()), default=traj.initial.max)
    report.values['min_density'] = lowest
    report.values['max_density'] = highest
    report.checks['bounds'] = lowest >= 0.0 and highest <= m.ceiling

    sup_h1 = sup_l2 = hess_sum = 0.0
    ratio_max = 0.0
    previous_entropy = traj.initial_entropy
    for record in traj.records:
        u = record.state
        br = energy_breakdown(u, m, traj.s0)
        fu = f_of(m, u.values)
        sup_h1 = max(sup_h1, math.sqrt(float(np.sum(fu * fu)) * u.grid.dx + br.grad_f_norm2))
        sup_l2 = max(sup_l2, math.sqrt(float(np.sum(u.values ** 2)) * u.grid.dx))
        hess_sum += traj.tau * br.hess_f_norm2
        ratio_max = max(ratio_max, entropy_bound_ratio(u, m, traj.s0))
        drop = previous_entropy - br.entropy
        if drop > 0.0:
            report.dissipation_ratios.append(traj.tau * br.hess_f_norm2 / drop)
        previous_entropy = br.entropy
    report.values['sup_f_h1'] = sup_h1
    report.values['f_l2_h2'] = math.sqrt(hess_sum)
    report.values['sup_u_l2'] = sup_l2
    report.values['entropy_bound_ratio'] = ratio_max
    return report


@dataclass
class HolderReport:
    pairs: List[Tuple[float, float, float, float]] = field(default_factory=list)
    slack: float = 0.05

    @property
    def passed(self) -> bool:
        return all(dist <= (1.0 + self.slack) * bound for _, _, dist, bound in self.pairs)

    @property
    def worst_ratio(self) -> float:
        ratios = [dist / bound for _, _, dist, bound in self.pairs if bound > 0.0]
        return max(ratios, default=0.0)


def holder_check(traj: JkoTrajectory, pairs: Optional[Sequence[Tuple[float, float]]] = None,
                 opts: Optional[TransportOptions] = None, count: int = 10, seed: int = 0,
                 slack: float = 0.05) -> HolderReport:
    """W_m(u(s), u(t)) <= sqrt(2 F(u0) max(|s - t|, tau)) on time pairs of the interpolant."""
    if pairs is None:
        rng = np.random.default_rng(seed)
        pairs = [tuple(sorted(rng.uniform(0.0, traj.horizon, size=2))) for _ in range(count)]
    opts = opts or TransportOptions(strict=False)
    solver = TransportSolver(traj.initial.grid, traj.mobility, opts)
    report = HolderReport(slack=slack)
    for s, t in pairs:
        a, b = traj.state_at(s), traj.state_at(t)
        distance2 = 0.0 if a is b else solver.solve(a, b)[0]
        bound = math.sqrt(2.0 * traj.initial_energy * max(abs(s - t), traj.tau))
        report.pairs.append((float(s), float(t), math.sqrt(max(distance2, 0.0)), bound))
    return report
