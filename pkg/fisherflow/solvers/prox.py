"""Action density A(rho, omega) = omega^2 / m(rho) and its per-face proximal map."""

import warnings

import numpy as np

from fisherflow.config.settings import PROX_MAX_ITER, PROX_TOL
from fisherflow.model.mobility import Mobility


def action_density(rho, omega, m: Mobility, atol: float = 0.0) -> np.ndarray:
    """omega^2 / m(rho) where m(rho) > 0; 0 where omega = 0 and m(rho) = 0; +inf otherwise.

    Densities within atol outside [0, S] are snapped back before evaluation.
    """
    rho = np.asarray(rho, dtype=float)
    omega = np.asarray(omega, dtype=float)
    outside = (rho < -atol) | (rho > m.ceiling + atol)
    snapped = np.clip(rho, 0.0, m.ceiling)
    mob = np.where(outside, 0.0, m.value(snapped))
    zero_flux = np.abs(omega) <= atol
    with np.errstate(divide='ignore', invalid='ignore'):
        density = np.where(mob > 0.0, omega * omega / np.where(mob > 0.0, mob, 1.0), np.inf)
    density = np.where((mob <= 0.0) & zero_flux & ~outside, 0.0, density)
    return np.where(outside, np.inf, density)


def _reduced_slope(rho, a, b2, gamma, m: Mobility):
    """phi'(rho) and phi''(rho) for phi(rho) = (rho - a)^2 / 2 + gamma b^2 / (m(rho) + 2 gamma)."""
    mob = m.value(rho)
    d1 = m.derivative(rho)
    d2 = m.second_derivative(rho)
    den = mob + 2.0 * gamma
    with np.errstate(invalid='ignore', over='ignore'):
        slope = (rho - a) - gamma * b2 * d1 / den ** 2
        curvature = 1.0 + gamma * b2 * (2.0 * d1 * d1 / den ** 3 - d2 / den ** 2)
    return slope, curvature


def prox_action(a, b, gamma: float, m: Mobility, tol: float = PROX_TOL, max_iter: int = PROX_MAX_ITER):
    """Proximal map of gamma * A at (a, b), face by face.

    For fixed rho the optimal flux is omega = b m(rho) / (m(rho) + 2 gamma), which
    leaves a strictly convex scalar problem in rho; its optimality condition is
    solved by Newton steps safeguarded by bisection on a sign-change bracket.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    shape = a.shape
    a = a.ravel()
    b2 = (b * b).ravel()
    S = m.ceiling

    lo = np.zeros_like(a)
    if np.isfinite(S):
        hi = np.full_like(a, S)
    else:
        hi = np.maximum(a, 0.0) + 1.0
        for _ in range(200):
            slope, _ = _reduced_slope(hi, a, b2, gamma, m)
            short = ~(slope > 0.0)
            if not np.any(short):
                break
            hi[short] *= 2.0

    rho = np.clip(a, lo, hi)
    slope_lo, _ = _reduced_slope(lo, a, b2, gamma, m)
    pinned_lo = slope_lo >= 0.0
    pinned_hi = np.zeros_like(pinned_lo)
    if np.isfinite(S):
        slope_hi, _ = _reduced_slope(hi, a, b2, gamma, m)
        pinned_hi = slope_hi <= 0.0
    no_flux = b2 == 0.0
    active = ~(pinned_lo | pinned_hi | no_flux)

    rho = np.where(active, np.clip(rho, lo + 0.5 * (hi - lo) * 1e-3, hi - 0.5 * (hi - lo) * 1e-3), rho)
    converged = ~active
    for _ in range(max_iter):
        if np.all(converged):
            break
        idx = ~converged
        slope, curvature = _reduced_slope(rho[idx], a[idx], b2[idx], gamma, m)
        lo_i, hi_i = lo[idx], hi[idx]
        positive = slope > 0.0
        hi_i = np.where(positive, rho[idx], hi_i)
        lo_i = np.where(positive, lo_i, rho[idx])
        lo[idx], hi[idx] = lo_i, hi_i
        with np.errstate(invalid='ignore', divide='ignore'):
            step = rho[idx] - slope / curvature
        bad = ~np.isfinite(step) | (step <= lo_i) | (step >= hi_i)
        new = np.where(bad, 0.5 * (lo_i + hi_i), step)
        done = (np.abs(slope) <= tol * (1.0 + np.abs(a[idx]))) | (hi_i - lo_i <= tol * (1.0 + hi_i))
        rho_i = np.where(done, rho[idx], new)
        rho[idx] = rho_i
        conv = converged.copy()
        conv[idx] = done
        converged = conv
    else:
        if not np.all(converged):
            warnings.warn(f"prox Newton stopped after {max_iter} iterations on "
                          f"{int(np.count_nonzero(~converged))} faces")

    rho = np.where(pinned_lo & ~no_flux, 0.0, rho)
    rho = np.where(pinned_hi & ~pinned_lo & ~no_flux, hi, rho)
    rho = np.where(no_flux, np.clip(a, 0.0, S), rho)
    mob = m.value(rho)
    omega = b.ravel() * mob / (mob + 2.0 * gamma)
    return rho.reshape(shape), omega.reshape(shape)
