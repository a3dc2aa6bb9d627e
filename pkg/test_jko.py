#!/usr/bin/env python3
"""
Tests for the minimizing-movement scheme: single steps, trajectories, the
piecewise-constant interpolant and the a-priori estimate checks.
"""

import sys
from pathlib import Path

import numpy as np
import pytest

# Add parent directory to path
sys.path.insert(0, str(Path(__file__).parent))

from fisherflow.core.jko import (
    JkoOptions, JkoScheme, check_estimates, holder_check, jko_step, monotonicity_allowance, run
)
from fisherflow.model.functionals import fisher_energy, heat_entropy
from fisherflow.model.grid import DensityField, Grid1D
from fisherflow.model.mobility import Mobility, regularize
from fisherflow.solvers.transport import TransportOptions

LINEAR = Mobility.linear()


def constant_field(cells=16, level=1.0):
    return DensityField(Grid1D(1.0, cells), np.full(cells, level))


def cosine_field(cells=32, a=1.0, b=0.5):
    grid = Grid1D(1.0, cells)
    return DensityField(grid, a + b * np.cos(np.pi * grid.centers))


def quick_options(**overrides):
    transport = TransportOptions(tol=1e-5, max_iter=1500, strict=False)
    return JkoOptions(transport=transport, **overrides)


def test_constant_state_is_stationary():
    print("=" * 80)
    print("TESTING STATIONARY STEP")
    print("=" * 80)

    u = constant_field()
    state, record = jko_step(u, 1e-3, LINEAR)
    assert np.array_equal(state.values, u.values)
    assert record.accepted
    assert record.distance2 == 0.0
    assert record.fisher == 0.0
    print("   ✓ a constant density does not move")


def test_horizon_shorter_than_tau_gives_one_step():
    traj = run(constant_field(), 1e-2, 5e-3, LINEAR)
    assert len(traj.records) == 1
    assert traj.horizon == pytest.approx(1e-2)


def test_piecewise_constant_interpolant():
    u0 = constant_field()
    traj = run(u0, 1e-3, 3e-3, LINEAR)
    assert len(traj.records) == 3
    assert traj.state_at(0.0) is u0
    assert traj.state_at(5e-4) is traj.records[0].state
    assert traj.state_at(1e-3) is traj.records[0].state
    assert traj.state_at(1.5e-3) is traj.records[1].state
    assert traj.state_at(1.0) is traj.records[-1].state
    assert [row[0] for row in traj.rows()] == [1, 2, 3]
    assert traj.rows()[0][1] == pytest.approx(1e-3)


def test_estimates_on_stationary_trajectory():
    traj = run(constant_field(), 1e-3, 5e-3, LINEAR)
    report = check_estimates(traj)
    assert report.passed
    assert report.first_failure() is None
    assert report.values['mass_drift'] == 0.0
    assert report.values['distance_sum'] == 0.0


def test_monotonicity_allowance():
    assert monotonicity_allowance(1e-9, 0.0) == pytest.approx(1e-8)
    assert monotonicity_allowance(1e-6, 1.0) == pytest.approx(2e-5)


def test_step_uses_the_given_reference_point():
    u = constant_field(level=1.2)
    scheme = JkoScheme(LINEAR, 1e-3)
    record = scheme.step(u, s0=0.9)
    assert record.entropy == pytest.approx(heat_entropy(u, LINEAR, 0.9), rel=1e-14)
    assert record.entropy > 0.0


@pytest.mark.slow
@pytest.mark.parametrize('preconditioner', ['metric', 'none'])
def test_single_step_decreases_objective(preconditioner):
    print("=" * 80)
    print(f"TESTING ONE STEP ({preconditioner} preconditioner)")
    print("=" * 80)

    u = cosine_field()
    energy = fisher_energy(u, LINEAR)
    scheme = JkoScheme(LINEAR, 1e-3, quick_options(max_outer=3, preconditioner=preconditioner))
    record = scheme.step(u)
    assert record.accepted
    assert record.objective < energy
    assert record.fisher < energy
    assert record.distance2 > 0.0
    assert record.state.exact_mass() == pytest.approx(u.exact_mass(), abs=1e-12)
    assert record.state.min >= 0.0
    print(f"   ✓ F {energy:.8f} -> {record.fisher:.8f}, W^2 = {record.distance2:.3e}")


@pytest.mark.slow
def test_trajectory_satisfies_estimates():
    print("=" * 80)
    print("TESTING TRAJECTORY ESTIMATES")
    print("=" * 80)

    u0 = cosine_field(cells=32)
    traj = JkoScheme(LINEAR, 1e-3, quick_options(max_outer=5)).run(u0, 5e-3)
    report = check_estimates(traj)
    for name in ('energy_monotone', 'entropy_monotone', 'distance_sum', 'mass', 'bounds'):
        assert report.checks[name], name
    assert np.all(np.diff(traj.energies) <= traj.eps_mono)
    assert report.values['sup_f_h1'] > 0.0

    holder = holder_check(traj, pairs=[(0.0, 5e-3), (1e-3, 4e-3)],
                          opts=TransportOptions(tol=1e-5, max_iter=1500, strict=False))
    assert holder.passed
    print(f"   ✓ estimates hold, worst Hölder ratio {holder.worst_ratio:.3f}")


@pytest.mark.slow
def test_run_keeps_one_reference_point():
    """Every step of a run shares the entropy reference of u0, so one h table is built."""
    m = regularize(Mobility.power(0.8), 0.05)
    u0 = cosine_field(cells=16)
    traj = JkoScheme(m, 1e-3, quick_options(max_outer=2)).run(u0, 4e-3)
    tables = [key for key in m._cache if isinstance(key, tuple) and key[0] == 'h_table']
    assert tables == [('h_table', traj.s0)]
    for record in traj.records:
        assert record.entropy == pytest.approx(heat_entropy(record.state, m, traj.s0), rel=1e-12)


@pytest.mark.slow
def test_fifty_step_linear_run():
    print("=" * 80)
    print("TESTING FIFTY LINEAR STEPS")
    print("=" * 80)

    opts = JkoOptions(tol_outer=1e-9, transport=TransportOptions(tol=1e-6, max_iter=5000, strict=False))
    traj = JkoScheme(LINEAR, 1e-3, opts).run(cosine_field(cells=128), 5e-2)
    assert len(traj.records) == 50
    report = check_estimates(traj)
    for name in ('energy_monotone', 'entropy_monotone', 'distance_sum', 'mass', 'bounds'):
        assert report.checks[name], name
    assert report.values['distance_sum'] <= 2.0 * traj.tau * traj.initial_energy * (1.0 + 1e-3)
    assert report.values['mass_drift'] <= 1e-10

    holder = holder_check(traj, count=10, seed=0,
                          opts=TransportOptions(tol=1e-6, max_iter=5000, strict=False))
    assert len(holder.pairs) == 10
    assert holder.passed
    print(f"   ✓ estimates hold over 50 steps, worst Hölder ratio {holder.worst_ratio:.3f}")


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, '-v']))
