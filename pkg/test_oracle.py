#!/usr/bin/env python3
"""
Tests for the implicit Euler reference integrator and the run comparison.
"""

import math
import sys
from pathlib import Path

import numpy as np
import pytest

# Add parent directory to path
sys.path.insert(0, str(Path(__file__).parent))

from fisherflow.core.jko import JkoOptions, JkoScheme
from fisherflow.errors import GridMismatch, NewtonFailure
from fisherflow.model.functionals import fisher_energy
from fisherflow.model.grid import DensityField, Grid1D, d2_cell, d_face, div_cell, face_average, initial_profile
from fisherflow.model.mobility import Mobility
from fisherflow.solvers.oracle import compare, density_floor, oracle_run, oracle_step, spatial_operator
from fisherflow.solvers.transport import TransportOptions

LINEAR = Mobility.linear()


def cosine_field(cells=32, a=1.0, b=0.5):
    grid = Grid1D(1.0, cells)
    return DensityField(grid, a + b * np.cos(np.pi * grid.centers))


def test_density_floor():
    assert density_floor(cosine_field()) == pytest.approx(1e-3)


def test_spatial_operator_linear_form():
    """For m(z) = z the operator is div(u_face d_face(-(4 / sqrt(u)) d2 sqrt(u)))."""
    u = cosine_field()
    root = np.sqrt(u.values)
    potential = -4.0 / root * d2_cell(u.grid, root)
    flux = d_face(u.grid, potential)
    flux[1:-1] *= face_average(u.values)
    expected = div_cell(u.grid, flux)
    assert np.allclose(spatial_operator(u, LINEAR), expected, rtol=1e-10, atol=1e-8)
    assert abs(float(np.sum(spatial_operator(u, LINEAR)))) <= 1e-6


def test_constant_state_is_fixed_point():
    u = DensityField(Grid1D(1.0, 16), np.full(16, 2.0))
    assert np.array_equal(oracle_step(u, 1e-3, LINEAR).values, u.values)


def test_oracle_conserves_mass_and_dissipates_energy():
    print("=" * 80)
    print("TESTING IMPLICIT EULER ORACLE")
    print("=" * 80)

    u0 = cosine_field()
    reference = oracle_run(u0, 1e-5, 3e-5, LINEAR)
    assert len(reference.steps) == 3
    energies = [fisher_energy(u0, LINEAR)] + [fisher_energy(u, LINEAR) for u in reference.states()]
    assert all(b < a for a, b in zip(energies, energies[1:]))
    for u in reference.states():
        assert u.exact_mass() == pytest.approx(u0.exact_mass(), abs=1e-10)
    rows = reference.rows()
    assert [row[0] for row in rows] == [1, 2, 3]
    assert all(math.isnan(row[4]) for row in rows)
    print("   ✓ " + " > ".join(f"{e:.8f}" for e in energies))


def test_oracle_refuses_degenerate_data():
    grid = Grid1D(1.0, 32)
    bump, _ = initial_profile(grid, 'compact_bump', {'center': 0.5, 'width': 0.2}, mass=1.0)
    with pytest.raises(NewtonFailure):
        oracle_step(bump, 1e-4, LINEAR)


def test_compare_identical_runs():
    reference = oracle_run(cosine_field(), 1e-5, 2e-5, LINEAR)
    assert compare(reference, reference, 2e-5) == 0.0
    other = oracle_run(cosine_field(cells=16), 1e-5, 1e-5, LINEAR)
    with pytest.raises(GridMismatch):
        compare(reference, other, 1e-5)


@pytest.mark.slow
def test_scheme_agrees_with_oracle():
    print("=" * 80)
    print("TESTING SCHEME AGAINST THE ORACLE")
    print("=" * 80)

    u0 = cosine_field(cells=32)
    opts = JkoOptions(max_outer=5, transport=TransportOptions(tol=1e-6, max_iter=3000, strict=False))
    traj = JkoScheme(LINEAR, 1e-3, opts).run(u0, 1e-3)
    reference = oracle_run(u0, 1e-4, 1e-3, LINEAR)
    error = compare(traj, reference, 1e-3)
    assert error <= 0.02
    print(f"   ✓ relative L2 difference {error:.3e}")


@pytest.mark.slow
def test_oracle_agreement_improves_with_smaller_tau():
    print("=" * 80)
    print("TESTING ORACLE AGREEMENT UNDER TAU REFINEMENT")
    print("=" * 80)

    u0 = cosine_field(cells=128)
    horizon = 1e-2
    reference = oracle_run(u0, 1e-4, horizon, LINEAR)
    errors = []
    for tau in (1e-3, 2.5e-4):
        opts = JkoOptions(tol_outer=1e-9, transport=TransportOptions(tol=1e-6, max_iter=5000, strict=False))
        traj = JkoScheme(LINEAR, tau, opts).run(u0, horizon)
        errors.append(compare(traj, reference, horizon))
    assert errors[0] <= 0.05
    assert errors[1] < errors[0]
    print(f"   ✓ relative L2 difference {errors[0]:.3e} at tau = 1e-3, {errors[1]:.3e} at tau = 2.5e-4")


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, '-v']))
