#!/usr/bin/env python3
"""
Tests for the action density, its proximal map and the primal-dual transport
solver.
"""

import math
import sys
from pathlib import Path

import numpy as np
import pytest
from scipy import optimize

# Add parent directory to path
sys.path.insert(0, str(Path(__file__).parent))

from fisherflow.errors import GridMismatch, MassMismatch
from fisherflow.model.grid import DensityField, Grid1D, translate_bump
from fisherflow.model.mobility import Mobility, regularize
from fisherflow.solvers.prox import action_density, prox_action
from fisherflow.solvers.transport import (
    TransportOptions, TransportPath, TransportSolver, action, constant_path, continuity_defect,
    continuity_residual, face_density, solve_distance, terminal_potential
)

LINEAR = Mobility.linear()
POWER = Mobility.power(0.8)
SATURATING = Mobility.double_power(1.0, 1.0, 1.0)


def smooth_bump(x, center, width):
    r = (x - center) / width
    return np.where(np.abs(r) < 1.0, (1.0 - r * r) ** 4, 0.0)


def cosine_pair(cells, amplitude=0.3):
    grid = Grid1D(1.0, cells)
    wave = amplitude * np.cos(np.pi * grid.centers)
    return DensityField(grid, 1.0 + wave), DensityField(grid, 1.0 - wave)


def test_action_density_conventions():
    assert action_density(0.0, 0.0, LINEAR) == 0.0
    assert action_density(0.0, 1.0, LINEAR) == math.inf
    assert action_density(-0.1, 0.0, LINEAR) == math.inf
    assert action_density(2.0, 1.0, LINEAR) == pytest.approx(0.5)
    assert action_density(1.5, 0.0, SATURATING) == math.inf
    assert action_density(-1e-9, 0.0, LINEAR, atol=1e-8) == 0.0


@pytest.mark.parametrize('m', [LINEAR, POWER, SATURATING])
def test_prox_matches_scalar_minimization(m):
    print("=" * 80)
    print(f"TESTING PROXIMAL MAP FOR {m.describe()}")
    print("=" * 80)

    rng = np.random.default_rng(3)
    top = m.ceiling if m.finite_ceiling else 4.0
    a = rng.uniform(-0.5, top + 0.5, 40)
    b = rng.uniform(-2.0, 2.0, 40)
    gamma = 0.3
    rho, omega = prox_action(a, b, gamma, m)
    for k in range(a.size):
        def reduced(r):
            mob = float(m.value(r))
            return 0.5 * (r - a[k]) ** 2 + gamma * b[k] ** 2 / (mob + 2.0 * gamma)
        best = optimize.minimize_scalar(reduced, bounds=(0.0, top if m.finite_ceiling else 50.0),
                                        method='bounded', options={'xatol': 1e-12})
        assert reduced(rho[k]) <= reduced(best.x) + 1e-10
        mob = float(m.value(rho[k]))
        assert omega[k] == pytest.approx(b[k] * mob / (mob + 2.0 * gamma), rel=1e-12, abs=1e-15)
    assert np.all(rho >= 0.0) and np.all(rho <= m.ceiling)
    print("   ✓ prox attains the minimum of the reduced problem on every face")


def test_prox_without_flux_is_clipping():
    rho, omega = prox_action(np.array([-1.0, 0.4, 3.0]), np.zeros(3), 0.5, SATURATING)
    assert np.array_equal(rho, [0.0, 0.4, 1.0])
    assert np.all(omega == 0.0)


def test_projection_enforces_continuity():
    grid = Grid1D(1.0, 24)
    solver = TransportSolver(grid, LINEAR, TransportOptions(time_slices=12))
    rng = np.random.default_rng(5)
    u0 = rng.uniform(0.5, 1.5, grid.cells)
    u1 = u0[::-1].copy()
    u, w = solver.project(rng.standard_normal((13, grid.cells)), rng.standard_normal((12, grid.cells + 1)),
                          u0, u1)
    assert np.array_equal(u[0], u0) and np.array_equal(u[-1], u1)
    assert np.all(w[:, 0] == 0.0) and np.all(w[:, -1] == 0.0)
    assert float(np.max(np.abs(continuity_defect(u, w, grid.dx)))) <= 1e-10


def test_hand_built_translation_defect_decreases_with_refinement():
    """Defect of a sampled translating bump with flux a * rho shrinks under refinement."""
    speed = 0.2
    defects = []
    for cells, slices in ((64, 16), (128, 32)):
        grid = Grid1D(1.0, cells)
        s = np.linspace(0.0, 1.0, slices + 1)
        u = np.array([smooth_bump(grid.centers, 0.4 + speed * sj, 0.2) for sj in s])
        path = TransportPath(grid=grid, u=u, w=np.zeros((slices, cells + 1)))
        path.w[:, 1:-1] = speed * path.face_density()
        defects.append(continuity_residual(path))
    assert defects[1] < 0.5 * defects[0]


def test_face_density_is_four_point_mean_and_time_symmetric():
    """rho on a face averages the two adjacent cells at both ends of the half-step."""
    grid = Grid1D(1.0, 16)
    rng = np.random.default_rng(7)
    u = rng.uniform(0.5, 1.5, (9, grid.cells))
    rho = face_density(u)
    assert rho.shape == (8, grid.cells - 1)
    assert rho[3, 5] == pytest.approx(0.25 * (u[3, 5] + u[3, 6] + u[4, 5] + u[4, 6]), rel=1e-15)

    w = np.zeros((8, grid.cells + 1))
    w[:, 1:-1] = rng.standard_normal((8, grid.cells - 1))
    forward = TransportPath(grid=grid, u=u, w=w)
    backward = TransportPath(grid=grid, u=u[::-1].copy(), w=-w[::-1].copy())
    assert action(backward, POWER) == pytest.approx(action(forward, POWER), rel=1e-13)


def test_equal_endpoints_give_zero_distance():
    u0, _ = cosine_pair(32)
    distance2, path = solve_distance(u0, u0, LINEAR)
    assert distance2 == 0.0
    assert path.stats.converged
    assert action(constant_path(u0, 8), LINEAR) == 0.0


def test_solver_rejects_bad_inputs():
    u0, u1 = cosine_pair(32)
    with pytest.raises(MassMismatch):
        solve_distance(u0, u1.with_values(u1.values * 1.1), LINEAR)
    with pytest.raises(GridMismatch):
        TransportSolver(u0.grid, LINEAR, TransportOptions(time_slices=1))
    other = DensityField(Grid1D(1.0, 64), np.ones(64))
    with pytest.raises(GridMismatch):
        solve_distance(u0, other, LINEAR)


@pytest.mark.slow
def test_translation_distance():
    """Translating a unit-mass bump by 0.1 costs W = 0.1 for m(z) = z."""
    print("=" * 80)
    print("TESTING TRANSLATION DISTANCE")
    print("=" * 80)

    grid = Grid1D(1.0, 128)
    u0, u1 = translate_bump(grid, 0.4, 0.2, 0.1, mass=1.0)
    opts = TransportOptions(tol=1e-6, max_iter=5000, time_slices=32, strict=False)
    distance2, path = solve_distance(u0, u1, LINEAR, opts)
    assert math.sqrt(distance2) == pytest.approx(0.1, rel=1e-2)
    assert continuity_residual(path) <= 1e-8
    assert path.stats.iterations <= 5000
    print(f"   ✓ W = {math.sqrt(distance2):.6f} after {path.stats.iterations} iterations")


@pytest.mark.slow
def test_distance_is_symmetric():
    u0, u1 = cosine_pair(32)
    opts = TransportOptions(tol=1e-8, max_iter=3000, time_slices=16, strict=False)
    forward, _ = solve_distance(u0, u1, POWER, opts)
    backward, _ = solve_distance(u1, u0, POWER, opts)
    assert forward == pytest.approx(backward, rel=1e-6)


@pytest.mark.slow
def test_smaller_mobility_gives_larger_distance():
    u0, u1 = cosine_pair(32)
    opts = TransportOptions(tol=1e-7, max_iter=4000, time_slices=16, strict=False)
    full, _ = solve_distance(u0, u1, POWER, opts)
    regularized, _ = solve_distance(u0, u1, regularize(POWER, 0.05), opts)
    assert full > 0.0
    assert full <= regularized


@pytest.mark.slow
def test_terminal_potential_matches_finite_differences():
    print("=" * 80)
    print("TESTING TERMINAL POTENTIAL")
    print("=" * 80)

    u0, u1 = cosine_pair(16, amplitude=0.2)
    opts = TransportOptions(tol=1e-9, max_iter=20000, time_slices=16, strict=False)
    solver = TransportSolver(u0.grid, LINEAR, opts)
    _, path = solver.solve(u0, u1)
    grad = terminal_potential(path, LINEAR)
    assert abs(float(np.mean(grad))) <= 1e-12

    phi = np.cos(2.0 * np.pi * u0.grid.centers)
    eps = 1e-3
    plus, _ = solver.solve(u0, u1.with_values(u1.values + eps * phi))
    minus, _ = solver.solve(u0, u1.with_values(u1.values - eps * phi))
    numeric = (plus - minus) / (4.0 * eps)
    analytic = float(np.sum(grad * phi)) * u0.grid.dx
    assert numeric == pytest.approx(analytic, rel=0.1)
    print(f"   ✓ directional derivative {analytic:.6e} vs finite difference {numeric:.6e}")


@pytest.mark.slow
def test_linear_distance_scales_with_mass():
    """For m(z) = z, doubling both endpoints doubles W^2."""
    u0, u1 = cosine_pair(32)
    opts = TransportOptions(tol=1e-7, max_iter=4000, time_slices=16, strict=False)
    single, _ = solve_distance(u0, u1, LINEAR, opts)
    double, _ = solve_distance(u0.with_values(2.0 * u0.values), u1.with_values(2.0 * u1.values), LINEAR, opts)
    assert double == pytest.approx(2.0 * single, rel=1e-2)


@pytest.mark.slow
def test_translation_distance_is_stable_under_refinement():
    print("=" * 80)
    print("TESTING TRANSPORT REFINEMENT")
    print("=" * 80)

    values = []
    for cells, slices in ((64, 16), (128, 32)):
        u0, u1 = translate_bump(Grid1D(1.0, cells), 0.4, 0.2, 0.1, mass=1.0)
        opts = TransportOptions(tol=1e-6, max_iter=5000, time_slices=slices, strict=False)
        values.append(solve_distance(u0, u1, LINEAR, opts)[0])
    assert abs(values[1] - values[0]) <= 0.05 * values[1]
    print(f"   ✓ W^2 = {values[0]:.6e} at N = 64 and {values[1]:.6e} at N = 128")


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, '-v']))
