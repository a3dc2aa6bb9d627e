"""Uniform cell-centered grid on [0, L], no-flux discrete calculus and the constraint projection."""

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Optional, Tuple

import numpy as np
from scipy import optimize

from fisherflow.errors import ConfigError, GridMismatch, Infeasible

PROFILES = ('constant', 'cosine_bump', 'gaussian_clamped', 'compact_bump', 'csv')


@dataclass(frozen=True)
class Grid1D:
    """N cells of width dx = L / N with centers x_i = (i + 1/2) dx."""
    length: float
    cells: int

    def __post_init__(self):
        if self.cells < 8:
            raise ConfigError(f"grid needs at least 8 cells, got {self.cells}")
        if not self.length > 0:
            raise ConfigError(f"grid length must be positive, got {self.length}")

    @property
    def dx(self) -> float:
        return self.length / self.cells

    @property
    def centers(self) -> np.ndarray:
        return (np.arange(self.cells) + 0.5) * self.dx

    @property
    def faces(self) -> np.ndarray:
        return np.arange(self.cells + 1) * self.dx

    def refined(self) -> 'Grid1D':
        return Grid1D(self.length, 2 * self.cells)


def total(values: np.ndarray, deterministic: bool = False) -> float:
    """Sum of an array; left-to-right exact summation when deterministic."""
    if deterministic:
        return math.fsum(np.ravel(values).tolist())
    return float(np.sum(values))


@dataclass(frozen=True)
class DensityField:
    grid: Grid1D
    values: np.ndarray
    ceiling: float = math.inf

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.shape != (self.grid.cells,):
            raise GridMismatch(f"field has shape {values.shape}, grid has {self.grid.cells} cells")
        object.__setattr__(self, 'values', values)

    @property
    def mass(self) -> float:
        return total(self.values) * self.grid.dx

    def exact_mass(self) -> float:
        return total(self.values, deterministic=True) * self.grid.dx

    @property
    def min(self) -> float:
        return float(np.min(self.values))

    @property
    def max(self) -> float:
        return float(np.max(self.values))

    def in_constraint_set(self, mass: float, atol: float = 1e-12) -> bool:
        return (self.min >= 0.0 and self.max <= self.ceiling
                and abs(self.exact_mass() - mass) <= atol * max(1.0, abs(mass)))

    def with_values(self, values) -> 'DensityField':
        return DensityField(self.grid, values, self.ceiling)

    def same_grid(self, other: 'DensityField'):
        if self.grid != other.grid:
            raise GridMismatch(f"grids differ: {self.grid} vs {other.grid}")


# Discrete calculus (Neumann / no-flux)

def d_face(grid: Grid1D, values: np.ndarray) -> np.ndarray:
    """Face gradient (u_{i+1} - u_i) / dx on the N + 1 faces; zero on both boundary faces."""
    values = np.asarray(values, dtype=float)
    grad = np.zeros(values.shape[:-1] + (grid.cells + 1,))
    grad[..., 1:-1] = np.diff(values, axis=-1) / grid.dx
    return grad


def div_cell(grid: Grid1D, flux: np.ndarray) -> np.ndarray:
    """Cell divergence (q_{i+1/2} - q_{i-1/2}) / dx of a face field."""
    return np.diff(np.asarray(flux, dtype=float), axis=-1) / grid.dx


def d2_cell(grid: Grid1D, values: np.ndarray) -> np.ndarray:
    """Cell second difference, div_cell(d_face(u)); summation by parts holds exactly."""
    return div_cell(grid, d_face(grid, values))


def face_average(values: np.ndarray) -> np.ndarray:
    """Arithmetic mean of the two cells adjacent to each interior face."""
    values = np.asarray(values, dtype=float)
    return 0.5 * (values[..., 1:] + values[..., :-1])


# Constraint projection

def _clipped_mass(values, shift, ceiling, dx):
    return float(np.sum(np.clip(values - shift, 0.0, ceiling))) * dx


def project_constraints(grid: Grid1D, values, mass: float, ceiling: float = math.inf) -> DensityField:
    """Euclidean projection onto {0 <= u <= S, sum u dx = U}.

    The projection is clip(v - lambda, 0, S) for the unique shift lambda
    matching the mass; lambda is bracketed, located by brentq and then made
    exact on the resulting active set.
    """
    v = np.asarray(values, dtype=float)
    if v.shape != (grid.cells,):
        raise GridMismatch(f"field has shape {v.shape}, grid has {grid.cells} cells")
    if not np.all(np.isfinite(v)):
        raise Infeasible("cannot project a field with non-finite values")
    capacity = ceiling * grid.length
    if mass < 0.0 or mass > capacity * (1.0 + 1e-14):
        raise Infeasible(f"mass {mass} does not fit in [0, S L] = [0, {capacity}]")

    current = total(v, deterministic=True) * grid.dx
    if np.all(v >= 0.0) and np.all(v <= ceiling) and abs(current - mass) <= 1e-12 * max(1.0, mass):
        return DensityField(grid, v.copy(), ceiling)
    if mass == 0.0:
        return DensityField(grid, np.zeros_like(v), ceiling)
    if mass >= capacity:
        return DensityField(grid, np.full_like(v, ceiling), ceiling)

    lo = float(np.min(v)) - mass / grid.length
    hi = float(np.max(v))
    shift = optimize.brentq(lambda lam: _clipped_mass(v, lam, ceiling, grid.dx) - mass,
                            lo, hi, xtol=1e-15, rtol=4.0 * np.finfo(float).eps, maxiter=200)

    # exact shift on the active set
    moved = v - shift
    free = (moved > 0.0) & (moved < ceiling)
    if np.any(free):
        at_top = int(np.count_nonzero(moved >= ceiling))
        top_mass = at_top * ceiling if at_top else 0.0
        exact = (float(np.sum(v[free])) - (mass / grid.dx - top_mass)) / np.count_nonzero(free)
        candidate = v - exact
        # keep it only if the active set did not change
        if np.array_equal((candidate > 0.0) & (candidate < ceiling), free):
            return DensityField(grid, np.clip(candidate, 0.0, ceiling), ceiling)
    return DensityField(grid, np.clip(moved, 0.0, ceiling), ceiling)


# Initial data

def _profile_values(grid: Grid1D, profile: str, params: Dict[str, float]) -> np.ndarray:
    x = grid.centers
    L = grid.length
    if profile == 'constant':
        return np.full(grid.cells, params.get('a', 1.0))
    if profile == 'cosine_bump':
        a, b, k = params.get('a', 1.0), params.get('b', 0.5), params.get('k', 1.0)
        return a + b * np.cos(k * np.pi * x / L)
    if profile == 'gaussian_clamped':
        a, b = params.get('a', 0.0), params.get('b', 1.0)
        c, w = params.get('center', 0.5 * L), params.get('width', 0.1 * L)
        return a + b * np.exp(-0.5 * ((x - c) / w) ** 2)
    if profile == 'compact_bump':
        return compact_bump(grid, params.get('center', 0.5 * L), params.get('width', 0.2 * L),
                            params.get('b', 1.0)) + params.get('a', 0.0)
    if profile == 'csv':
        path = Path(params['path'])
        data = np.loadtxt(path, delimiter=',', comments='#', ndmin=2)
        column = int(params.get('column', 0))
        values = data[:, column]
        if values.size != grid.cells:
            raise GridMismatch(f"{path}: {values.size} values for a grid of {grid.cells} cells")
        return values
    raise ConfigError(f"unknown initial profile '{profile}' (expected one of {', '.join(PROFILES)})")


def initial_profile(grid: Grid1D, profile: str, params: Optional[Dict] = None,
                    ceiling: float = math.inf, mass: Optional[float] = None) -> Tuple[DensityField, float]:
    """Build a named initial profile, project it onto the constraint set and
    return the field with the sup-norm projection displacement.

    Without an explicit mass, the mass of the profile clipped to [0, S] is kept.
    A nonnegative profile is rescaled to an explicit mass when the result stays below S.
    """
    raw = _profile_values(grid, profile, dict(params or {}))
    current = total(np.clip(raw, 0.0, ceiling), deterministic=True) * grid.dx
    if mass is None:
        mass = current
    elif current > 0.0 and np.all(raw >= 0.0) and np.max(raw) * mass / current <= ceiling:
        raw = raw * (mass / current)
    field = project_constraints(grid, raw, mass, ceiling)
    displacement = float(np.max(np.abs(field.values - raw)))
    return field, displacement


def compact_bump(grid: Grid1D, center: float, width: float, height: float = 1.0) -> np.ndarray:
    """height * (1 - ((x - c) / w)^2)^2 on |x - c| < w, zero outside."""
    r = (grid.centers - center) / width
    return height * np.where(np.abs(r) < 1.0, (1.0 - r * r) ** 2, 0.0)


def translate_bump(grid: Grid1D, center: float, width: float, shift: float,
                   mass: float = 1.0, ceiling: float = math.inf) -> Tuple[DensityField, DensityField]:
    """A compact bump and its translate by `shift`, both carrying the given mass."""
    first = project_constraints(grid, _normalized(grid, compact_bump(grid, center, width), mass), mass, ceiling)
    second = project_constraints(grid, _normalized(grid, compact_bump(grid, center + shift, width), mass), mass, ceiling)
    return first, second


def _normalized(grid: Grid1D, values: np.ndarray, mass: float) -> np.ndarray:
    return values * (mass / (total(values, deterministic=True) * grid.dx))
