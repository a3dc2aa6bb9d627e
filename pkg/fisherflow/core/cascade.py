"""Regularization cascade: the scheme run with m_delta for a decreasing delta schedule."""

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np

from fisherflow.config.settings import (
    CASCADE_CONDITIONING, CASCADE_LEVELS, MAX_WORKERS, NEAR_INADMISSIBLE_ENERGY
)
from fisherflow.core.jko import EstimateReport, JkoOptions, JkoScheme, JkoTrajectory, check_estimates
from fisherflow.errors import MobilityError, ScheduleNotDecreasing
from fisherflow.model.functionals import fisher_energy
from fisherflow.model.grid import DensityField, d_face
from fisherflow.model.mobility import (
    Mobility, f_at_ceiling, f_inverse, f_of, regularize, sample_mesh, validate
)


def check_schedule(schedule: Sequence[float]) -> List[float]:
    deltas = [float(d) for d in schedule]
    if not deltas:
        raise ScheduleNotDecreasing("regularization schedule is empty")
    if any(d <= 0.0 for d in deltas):
        raise ScheduleNotDecreasing(f"schedule entries must be positive: {deltas}")
    if any(b >= a for a, b in zip(deltas, deltas[1:])):
        raise ScheduleNotDecreasing(f"schedule must be strictly decreasing: {deltas}")
    return deltas


def default_schedule(m: Mobility, u0: DensityField, levels: int = CASCADE_LEVELS) -> List[float]:
    """delta_k = delta_bar 2^-k with m_delta_bar(mean) >= CASCADE_CONDITIONING * max m near the mean."""
    mean = u0.exact_mass() / u0.grid.length
    reach = min(m.ceiling, 2.0 * mean)
    peak = float(np.max(m.value(np.linspace(0.0, reach, 1025))))
    target = CASCADE_CONDITIONING * peak
    delta = 0.1 * float(m.value(mean))
    for _ in range(60):
        try:
            if float(regularize(m, delta).value(min(mean, m.ceiling))) >= target:
                break
        except MobilityError:
            pass
        delta *= 0.5
    return [delta * 2.0 ** (-k) for k in range(levels)]


@dataclass
class CascadeLevel:
    delta: float
    mobility: Mobility
    initial_energy: float
    trajectory: Optional[JkoTrajectory] = None
    estimates: Optional[EstimateReport] = None
    uniform_energy_ok: bool = True


@dataclass
class CascadeResult:
    levels: List[CascadeLevel] = field(default_factory=list)
    gaps: List[float] = field(default_factory=list)
    top_energy: float = math.nan
    near_inadmissible: bool = False
    checks: Dict[str, bool] = field(default_factory=dict)

    @property
    def trajectories(self) -> List[JkoTrajectory]:
        return [level.trajectory for level in self.levels]

    @property
    def passed(self) -> bool:
        return all(self.checks.values())

    def first_failure(self) -> Optional[str]:
        for name, ok in self.checks.items():
            if not ok:
                return name
        return None

    def rows(self):
        """(delta, F_delta(u0), final F, final H, gap to next level) per level."""
        out = []
        for k, level in enumerate(self.levels):
            last = level.trajectory.records[-1] if level.trajectory.records else None
            out.append((level.delta, level.initial_energy,
                        last.fisher if last else level.initial_energy,
                        last.entropy if last else level.trajectory.initial_entropy,
                        self.gaps[k] if k < len(self.gaps) else math.nan))
        return out


def level_gap(first: JkoTrajectory, second: JkoTrajectory) -> float:
    """Discrete L2(0, T; H1) distance between f_delta(u_delta) of two levels."""
    total = 0.0
    for a, b in zip(first.states(), second.states()):
        diff = f_of(first.mobility, a.values) - f_of(second.mobility, b.values)
        grad = d_face(a.grid, diff)
        total += first.tau * (float(np.sum(diff * diff)) + float(np.sum(grad * grad))) * a.grid.dx
    return math.sqrt(total)


def _nonincreasing(values: Sequence[float], atol: float = 1e-12) -> bool:
    return all(b <= a + atol * (1.0 + abs(a)) for a, b in zip(values, values[1:]))


def mobility_ordering(m: Mobility, levels: Sequence[Mobility], mesh: np.ndarray, tol: float = 1e-12) -> bool:
    """m_{delta_k} <= m_{delta_{k+1}} <= m on the mesh for a decreasing schedule."""
    top = m.value(mesh)
    previous = None
    for level in levels:
        current = level.value(mesh)
        if np.any(current > top + tol):
            return False
        if previous is not None and np.any(current < previous - tol):
            return False
        previous = current
    return True


def run_cascade(u0: DensityField, m: Mobility, schedule: Sequence[float], tau: float, horizon: float,
                opts: Optional[JkoOptions] = None, workers: int = MAX_WORKERS) -> CascadeResult:
    """One trajectory per delta, all from u0, with consecutive-level gaps and uniform checks."""
    deltas = check_schedule(schedule)
    opts = opts or JkoOptions()
    result = CascadeResult()

    for delta in deltas:
        m_delta = regularize(m, delta)
        report = validate(m_delta)
        if not report.lsc:
            raise MobilityError(f"regularized mobility at delta = {delta} is not Lipschitz")
        result.levels.append(CascadeLevel(delta, m_delta, fisher_energy(u0, m_delta)))

    result.top_energy = result.levels[0].initial_energy
    result.near_inadmissible = result.top_energy > NEAR_INADMISSIBLE_ENERGY
    if result.near_inadmissible:
        print(f"[WARNING] initial datum is near-inadmissible: F at the largest delta is {result.top_energy:.6g}")

    print("=" * 60)
    print(f"[INFO] cascade over {len(deltas)} levels: {', '.join(f'{d:g}' for d in deltas)}")
    print("=" * 60)

    def solve(level: CascadeLevel) -> JkoTrajectory:
        return JkoScheme(level.mobility, tau, opts).run(u0, horizon)

    with ThreadPoolExecutor(max_workers=max(1, workers)) as executor:
        futures = [executor.submit(solve, level) for level in result.levels]
        for level, future in zip(result.levels, futures):
            level.trajectory = future.result()
            level.estimates = check_estimates(level.trajectory)
            peak = float(np.max(level.trajectory.energies))
            level.uniform_energy_ok = peak <= result.top_energy + level.trajectory.eps_mono
            print(f"[INFO] delta = {level.delta:g}: final F = {level.trajectory.energies[-1]:.12g}, "
                  f"estimates {'passed' if level.estimates.passed else 'FAILED'}")

    result.gaps = [level_gap(a.trajectory, b.trajectory)
                   for a, b in zip(result.levels, result.levels[1:])]

    mesh = sample_mesh(m, 2000)
    if m.finite_ceiling:
        mesh = mesh[mesh < m.ceiling]
    else:
        mesh = mesh[mesh <= 10.0 * max(u0.max, 1.0)]
    result.checks['mobility_ordering'] = mobility_ordering(m, [lv.mobility for lv in result.levels], mesh)
    result.checks['initial_energy_ordering'] = _nonincreasing([lv.initial_energy for lv in result.levels])
    result.checks['uniform_energy'] = all(lv.uniform_energy_ok for lv in result.levels)
    result.checks['level_estimates'] = all(lv.estimates.passed for lv in result.levels)
    tail = result.gaps[-3:]
    result.checks['gaps_nonincreasing'] = _nonincreasing(tail, atol=1e-9)
    return result


@dataclass
class GLimitReport:
    deltas: List[float]
    sup_gaps: List[float]
    mesh: np.ndarray
    bounded_form: bool

    @property
    def decreasing(self) -> bool:
        return all(b < a or (a == 0.0 and b == 0.0) for a, b in zip(self.sup_gaps, self.sup_gaps[1:]))


def _limit_function(m: Mobility, w: np.ndarray, top: Optional[float]) -> np.ndarray:
    """G(w) = m'(g(w)) sqrt(w), or m'(g(w)) sqrt(w (top - w)) when a top value is given.

    The end points take their continuous extension 0.
    """
    out = np.zeros_like(w)
    if top is None:
        inner = w > 0.0
        out[inner] = m.derivative(f_inverse(m, w[inner])) * np.sqrt(w[inner])
    else:
        inner = (w > 0.0) & (w < top)
        out[inner] = m.derivative(f_inverse(m, w[inner])) * np.sqrt(w[inner] * (top - w[inner]))
    return out


def g_limit_check(m: Mobility, schedule: Sequence[float], mesh: Optional[np.ndarray] = None) -> GLimitReport:
    """Sup-norm distance between G_delta and G (G-tilde forms when S is finite) per level."""
    deltas = check_schedule(schedule)
    bounded = m.finite_ceiling
    if mesh is None:
        upper = f_at_ceiling(m) if bounded else f_of(m, 1.0)
        mesh = np.linspace(0.0, upper, 401)
    mesh = np.asarray(mesh, dtype=float)
    reference = _limit_function(m, mesh, f_at_ceiling(m) if bounded else None)
    gaps = []
    for delta in deltas:
        m_delta = regularize(m, delta)
        top = f_at_ceiling(m_delta) if bounded else None
        if bounded:
            # f_delta(S) >= f(S), so the mesh stays inside the domain of g_delta
            values = _limit_function(m_delta, np.minimum(mesh, np.nextafter(top, 0.0)), top)
        else:
            values = _limit_function(m_delta, mesh, None)
        gaps.append(float(np.max(np.abs(values - reference))))
    return GLimitReport(deltas=deltas, sup_gaps=gaps, mesh=mesh, bounded_form=bounded)
