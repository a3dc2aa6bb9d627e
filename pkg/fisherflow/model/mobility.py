"""Mobility functions, their structural conditions, and the induced maps f, g = f^-1 and h."""

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy import integrate, optimize, special
from scipy.interpolate import CubicHermiteSpline, PchipInterpolator

from fisherflow.config.settings import (
    F_TABLE_NODES, F_TABLE_MIN, F_TABLE_MAX, GAUSS_POINTS, QUAD_SPLIT_FACTOR,
    INVERSE_RTOL, VALIDATION_MESH_SIZE, CONCAVITY_TOL, LSC_BOUND, MS_SAMPLE_POINTS, TAYLOR_WINDOW
)
from fisherflow.errors import (
    DeltaTooLarge, DerivativeVanishes, DivergentIntegral, MobilityError,
    NonConcaveMobility, NonPositiveMobility, OutOfRange
)

LINEAR = 'linear'
POWER = 'power'
DOUBLE_POWER = 'double_power'
REGULARIZED = 'regularized'
CUSTOM = 'custom'

FAMILIES = (LINEAR, POWER, DOUBLE_POWER, REGULARIZED, CUSTOM)

CONDITION_CODES = {
    'positivity': 'M',
    'concavity': 'M',
    'boundary-degeneracy': 'M',
    'singularity-strength': 'M-S',
}

_GAUSS_T, _GAUSS_W = np.polynomial.legendre.leggauss(GAUSS_POINTS)


def _power_term(coef, z, p):
    """coef * z**p with the convention 0 * z**p = 0 even where z**p is infinite."""
    if coef == 0.0:
        return np.zeros_like(z)
    with np.errstate(divide='ignore', invalid='ignore'):
        return coef * np.power(z, p)


@dataclass(frozen=True)
class Mobility:
    """A concave mobility m on [0, S] together with its derivatives.

    Instances are immutable; the tables of f and h built on first use are
    cached on the instance and never change afterwards.
    """
    family: str
    exponents: Tuple[float, ...] = ()
    ceiling: float = math.inf
    scale: float = 1.0
    base: Optional['Mobility'] = None
    delta: float = 0.0
    shift: float = 0.0
    stretch: float = 1.0
    table: Optional[Tuple[Tuple[float, ...], Tuple[float, ...]]] = None
    _cache: Dict = field(default_factory=dict, init=False, compare=False, hash=False, repr=False)

    # Constructors

    @classmethod
    def linear(cls, scale: float = 1.0) -> 'Mobility':
        return cls(family=LINEAR, scale=float(scale))

    @classmethod
    def power(cls, beta: float, scale: float = 1.0) -> 'Mobility':
        if beta == 1.0:
            return cls.linear(scale)
        return cls(family=POWER, exponents=(float(beta),), scale=float(scale))

    @classmethod
    def double_power(cls, beta1: float, beta2: float, ceiling: float, scale: float = 1.0) -> 'Mobility':
        if not ceiling > 0 or not math.isfinite(ceiling):
            raise MobilityError(f"double power mobility needs a finite positive ceiling, got {ceiling}")
        return cls(family=DOUBLE_POWER, exponents=(float(beta1), float(beta2)),
                   ceiling=float(ceiling), scale=float(scale))

    @classmethod
    def custom(cls, z: Sequence[float], m: Sequence[float]) -> 'Mobility':
        """Mobility interpolated from a (z, m(z)) table with strictly increasing z."""
        z = np.asarray(z, dtype=float)
        m = np.asarray(m, dtype=float)
        if z.ndim != 1 or z.shape != m.shape or z.size < 4:
            raise MobilityError("custom mobility table needs two columns of equal length (at least 4 rows)")
        if np.any(np.diff(z) <= 0):
            raise MobilityError("custom mobility table must have strictly increasing z")
        ceiling = float(z[-1]) if m[-1] == 0.0 else math.inf
        return cls(family=CUSTOM, ceiling=ceiling, table=(tuple(z.tolist()), tuple(m.tolist())))

    @classmethod
    def from_table_file(cls, path) -> 'Mobility':
        data = np.loadtxt(Path(path), delimiter=None, comments='#', ndmin=2)
        if data.shape[1] != 2:
            raise MobilityError(f"{path}: expected two columns (z, m), found {data.shape[1]}")
        return cls.custom(data[:, 0], data[:, 1])

    @classmethod
    def from_params(cls, family: str, params: Dict[str, float]) -> 'Mobility':
        """Build a mobility from a config family name and its parameters."""
        family = family.strip().lower()
        if family == LINEAR:
            return cls.linear(params.get('scale', 1.0))
        if family == POWER:
            return cls.power(params['beta'], params.get('scale', 1.0))
        if family == DOUBLE_POWER:
            return cls.double_power(params['beta1'], params['beta2'], params['ceiling'],
                                    params.get('scale', 1.0))
        if family == CUSTOM:
            return cls.from_table_file(params['table'])
        raise MobilityError(f"unknown mobility family '{family}' (expected one of {', '.join(FAMILIES[:3] + (CUSTOM,))})")

    # Basic properties

    @property
    def finite_ceiling(self) -> bool:
        return math.isfinite(self.ceiling)

    @property
    def reference_scale(self) -> float:
        """S' = min(S, 1), the length scale used for floors and sample points."""
        return min(self.ceiling, 1.0)

    @property
    def has_closed_form(self) -> bool:
        if self.family in (LINEAR, POWER, DOUBLE_POWER):
            return True
        return False

    def describe(self) -> str:
        if self.family == LINEAR:
            return f"Linear(scale={self.scale:g})"
        if self.family == POWER:
            return f"Power(beta={self.exponents[0]:g}, scale={self.scale:g})"
        if self.family == DOUBLE_POWER:
            b1, b2 = self.exponents
            return f"DoublePower(beta1={b1:g}, beta2={b2:g}, S={self.ceiling:g}, scale={self.scale:g})"
        if self.family == REGULARIZED:
            return f"Regularized({self.base.describe()}, delta={self.delta:g})"
        return f"Custom({len(self.table[0])} rows, S={self.ceiling:g})"

    # Evaluators

    def _interpolator(self) -> PchipInterpolator:
        interp = self._cache.get('interp')
        if interp is None:
            z, m = (np.asarray(col) for col in self.table)
            interp = PchipInterpolator(z, m, extrapolate=False)
            self._cache['interp'] = interp
        return interp

    def _custom_eval(self, z, order):
        zt, mt = self.table
        interp = self._interpolator()
        inside = z <= zt[-1]
        out = np.empty_like(z)
        fn = interp if order == 0 else interp.derivative(order)
        out[inside] = fn(z[inside])
        if np.any(~inside):
            # linear extension beyond the table (S infinite)
            slope = float(interp.derivative(1)(zt[-1]))
            if order == 0:
                out[~inside] = mt[-1] + slope * (z[~inside] - zt[-1])
            elif order == 1:
                out[~inside] = slope
            else:
                out[~inside] = 0.0
        return out

    def value(self, z):
        z = np.asarray(z, dtype=float)
        if self.family == LINEAR:
            return self.scale * z
        if self.family == POWER:
            return self.scale * np.power(z, self.exponents[0])
        if self.family == DOUBLE_POWER:
            b1, b2 = self.exponents
            return self.scale * np.power(z, b1) * np.power(self.ceiling - z, b2)
        if self.family == REGULARIZED:
            return self._regularized_value(z)
        return self._custom_eval(np.atleast_1d(z), 0).reshape(z.shape)

    def _root_expansions(self):
        """Quadratic Taylor data (window, m', m'') of m_delta at 0 and, for finite S, at S."""
        expansions = self._cache.get('root_expansions')
        if expansions is None:
            s = self.stretch
            lower = (TAYLOR_WINDOW * self.shift / s,
                     s * float(self.base.derivative(self.shift)),
                     s * s * float(self.base.second_derivative(self.shift)))
            upper = None
            if self.finite_ceiling:
                top = self.shift + s * self.ceiling
                upper = (TAYLOR_WINDOW * (self.base.ceiling - top) / s,
                         s * float(self.base.derivative(top)),
                         s * s * float(self.base.second_derivative(top)))
            expansions = (lower, upper)
            self._cache['root_expansions'] = expansions
        return expansions

    def _regularized_value(self, z):
        # m(shift + stretch z) - delta cancels to rounding noise next to the roots
        out = self.base.value(self.shift + self.stretch * z) - self.delta
        lower, upper = self._root_expansions()
        window, d1, d2 = lower
        out = np.where(z < window, z * (d1 + 0.5 * d2 * z), out)
        if upper is not None:
            window, d1, d2 = upper
            r = z - self.ceiling
            out = np.where(-r < window, r * (d1 + 0.5 * d2 * r), out)
        return out

    def derivative(self, z):
        z = np.asarray(z, dtype=float)
        if self.family == LINEAR:
            return self.scale * np.ones_like(z)
        if self.family == POWER:
            beta = self.exponents[0]
            return self.scale * _power_term(beta, z, beta - 1.0)
        if self.family == DOUBLE_POWER:
            b1, b2 = self.exponents
            rest = self.ceiling - z
            with np.errstate(invalid='ignore'):
                return self.scale * (_power_term(b1, z, b1 - 1.0) * np.power(rest, b2)
                                     - _power_term(b2, rest, b2 - 1.0) * np.power(z, b1))
        if self.family == REGULARIZED:
            return self.stretch * self.base.derivative(self.shift + self.stretch * z)
        return self._custom_eval(np.atleast_1d(z), 1).reshape(z.shape)

    def second_derivative(self, z):
        z = np.asarray(z, dtype=float)
        if self.family == LINEAR:
            return np.zeros_like(z)
        if self.family == POWER:
            beta = self.exponents[0]
            return self.scale * _power_term(beta * (beta - 1.0), z, beta - 2.0)
        if self.family == DOUBLE_POWER:
            b1, b2 = self.exponents
            rest = self.ceiling - z
            with np.errstate(invalid='ignore'):
                return self.scale * (
                    _power_term(b1 * (b1 - 1.0), z, b1 - 2.0) * np.power(rest, b2)
                    - 2.0 * _power_term(b1, z, b1 - 1.0) * _power_term(b2, rest, b2 - 1.0)
                    + _power_term(b2 * (b2 - 1.0), rest, b2 - 2.0) * np.power(z, b1)
                )
        if self.family == REGULARIZED:
            return self.stretch ** 2 * self.base.second_derivative(self.shift + self.stretch * z)
        return self._custom_eval(np.atleast_1d(z), 2).reshape(z.shape)

    # Closed forms of f and its inverse

    def _beta_constants(self) -> Tuple[float, float, float]:
        b1, b2 = self.exponents
        a, b = 1.0 - 0.5 * b1, 1.0 - 0.5 * b2
        total = math.sqrt(2.0 / self.scale) * self.ceiling ** (1.0 - 0.5 * (b1 + b2)) * special.beta(a, b)
        return a, b, total

    def _f_closed(self, z):
        if self.family == LINEAR:
            return 2.0 * np.sqrt(2.0 * z / self.scale)
        if self.family == POWER:
            p = 1.0 - 0.5 * self.exponents[0]
            return math.sqrt(2.0 / self.scale) * np.power(z, p) / p
        a, b, total = self._beta_constants()
        return total * special.betainc(a, b, np.clip(z / self.ceiling, 0.0, 1.0))

    def _g_closed(self, w):
        if self.family == LINEAR:
            return self.scale * w * w / 8.0
        if self.family == POWER:
            p = 1.0 - 0.5 * self.exponents[0]
            return np.power(p * w / math.sqrt(2.0 / self.scale), 1.0 / p)
        a, b, total = self._beta_constants()
        return self.ceiling * special.betaincinv(a, b, np.clip(w / total, 0.0, 1.0))


# Quadrature and tables

def _integrand_f(m: Mobility):
    def q(r):
        with np.errstate(divide='ignore'):
            return np.sqrt(2.0 / m.value(r))
    return q


def _quad(fn, a, b):
    result = integrate.quad(fn, a, b, limit=200, epsabs=1e-14, epsrel=1e-12, full_output=1)
    value, abserr = result[0], result[1]
    if not math.isfinite(value) or (len(result) > 3 and abserr > 1e-6 * max(abs(value), 1.0)):
        raise DivergentIntegral(f"quadrature on [{a:g}, {b:g}] failed (value={value}, error={abserr})")
    return value


def f_quad(m: Mobility, z: float) -> float:
    """Adaptive quadrature of f(z) with the singular end pieces substituted away."""
    z = float(z)
    if z <= 0.0:
        return 0.0
    q = _integrand_f(m)
    split = QUAD_SPLIT_FACTOR * min(z, 1.0)
    # r = t^2 on [0, split]
    total = _quad(lambda t: float(q(t * t)) * 2.0 * t, 0.0, math.sqrt(split))
    upper = z
    if m.finite_ceiling and z > m.ceiling - split:
        top = m.ceiling - split
        if z > top and top > split:
            # r = S - t^2 on [top, z]
            total += _quad(lambda t: float(q(m.ceiling - t * t)) * 2.0 * t,
                           math.sqrt(max(m.ceiling - z, 0.0)), math.sqrt(split))
            upper = top
    if upper > split:
        total += _quad(lambda r: float(q(r)), split, upper)
    return total


def _table_nodes(m: Mobility) -> np.ndarray:
    count = F_TABLE_NODES
    if not m.finite_ceiling:
        inner = np.geomspace(F_TABLE_MIN * m.reference_scale, F_TABLE_MAX, count - 1)
        return np.concatenate(([0.0], inner))
    half = 0.5 * m.ceiling
    left = np.geomspace(F_TABLE_MIN * m.reference_scale, half, count // 2)
    right = m.ceiling - left[::-1][1:]
    return np.concatenate(([0.0], left, right, [m.ceiling]))


def _interval_integrals(fn, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Gauss-Legendre integrals of fn over the intervals [a_k, b_k], vectorized."""
    mid = 0.5 * (a + b)
    half = 0.5 * (b - a)
    x = mid[:, None] + half[:, None] * _GAUSS_T[None, :]
    return half * np.sum(_GAUSS_W[None, :] * fn(x), axis=1)


def _node_slopes(nodes: np.ndarray, values: np.ndarray, slopes: np.ndarray) -> np.ndarray:
    """Exact node derivatives for Hermite interpolation; secant slopes where they are infinite."""
    slopes = np.array(slopes, dtype=float)
    secant = np.diff(values) / np.diff(nodes)
    bad = ~np.isfinite(slopes)
    if bad[0]:
        slopes[0] = secant[0]
    if bad[-1]:
        slopes[-1] = secant[-1]
    inner = np.flatnonzero(bad[1:-1]) + 1
    slopes[inner] = 0.5 * (secant[inner - 1] + secant[inner])
    return slopes


def _f_table(m: Mobility):
    cached = m._cache.get('f_table')
    if cached is not None:
        return cached
    nodes = _table_nodes(m)
    q = _integrand_f(m)
    pieces = np.empty(nodes.size - 1)
    # first interval: r = t^2
    root = math.sqrt(nodes[1])
    pieces[0] = _interval_integrals(lambda t: q(t * t) * 2.0 * t, np.array([0.0]), np.array([root]))[0]
    last = nodes.size - 2
    if m.finite_ceiling:
        # last interval: r = S - t^2
        root = math.sqrt(m.ceiling - nodes[-2])
        pieces[last] = _interval_integrals(lambda t: q(m.ceiling - t * t) * 2.0 * t,
                                           np.array([0.0]), np.array([root]))[0]
        pieces[1:last] = _interval_integrals(q, nodes[1:last], nodes[2:last + 1])
    else:
        pieces[1:] = _interval_integrals(q, nodes[1:-1], nodes[2:])
    if not np.all(np.isfinite(pieces)):
        raise DivergentIntegral(f"f table for {m.describe()} has non-finite entries")
    values = np.concatenate(([0.0], np.cumsum(pieces)))
    table = (nodes, values, CubicHermiteSpline(nodes, values, _node_slopes(nodes, values, f_prime(m, nodes)),
                                               extrapolate=False))
    m._cache['f_table'] = table
    return table


def _h_closed(m: Mobility, s0: float, z):
    c = m.scale
    if m.family == LINEAR:
        return (special.xlogy(z, z / s0) - (z - s0)) / c
    if m.family == POWER:
        beta = m.exponents[0]
        return (z * (np.power(z, 1.0 - beta) - s0 ** (1.0 - beta)) / (1.0 - beta)
                - (np.power(z, 2.0 - beta) - s0 ** (2.0 - beta)) / (2.0 - beta)) / c
    S = m.ceiling
    rest = S - z
    return (special.xlogy(z, z / s0) + special.xlogy(rest, rest / (S - s0))) / (c * S)


def _h_has_closed_form(m: Mobility) -> bool:
    return m.family in (LINEAR, POWER) or (m.family == DOUBLE_POWER and m.exponents == (1.0, 1.0))


def h_quad(m: Mobility, s0: float, z: float) -> float:
    """Adaptive quadrature of h(z) = int_{s0}^z (z - r) / m(r) dr."""
    z = float(z)
    if z == s0:
        return 0.0
    return _quad(lambda r: (z - r) / float(m.value(r)), s0, z)


def _h_table(m: Mobility, s0: float):
    key = ('h_table', float(s0))
    cached = m._cache.get(key)
    if cached is not None:
        return cached
    nodes = np.unique(np.concatenate((_table_nodes(m), [s0])))
    k0 = int(np.searchsorted(nodes, s0))
    inv_m = lambda r: 1.0 / m.value(r)
    r_over_m = lambda r: r / m.value(r)
    interior = slice(1, nodes.size - 1) if m.finite_ceiling else slice(1, nodes.size)
    idx = np.arange(nodes.size)[interior]
    # cumulative integrals from node 1 (1/m is not integrable at 0)
    a_pieces = _interval_integrals(inv_m, nodes[idx[:-1]], nodes[idx[1:]])
    b_first = _interval_integrals(lambda t: r_over_m(t * t) * 2.0 * t,
                                  np.array([0.0]), np.array([math.sqrt(nodes[1])]))[0]
    b_pieces = _interval_integrals(r_over_m, nodes[idx[:-1]], nodes[idx[1:]])
    a_cum = np.concatenate(([0.0], np.cumsum(a_pieces)))
    b_cum = np.concatenate(([b_first], b_first + np.cumsum(b_pieces)))
    pos0 = k0 - 1
    a_rel = a_cum - a_cum[pos0]
    b_rel = b_cum - b_cum[pos0]
    values = np.empty(nodes.size)
    values[idx] = nodes[idx] * a_rel - b_rel
    # h(0) = int_0^{s0} r / m(r) dr
    values[0] = b_cum[pos0]
    if m.finite_ceiling:
        values[-1] = h_quad(m, s0, m.ceiling)
    values[k0] = 0.0
    if not np.all(np.isfinite(values)):
        raise DivergentIntegral(f"h table for {m.describe()} has non-finite entries")
    slopes = np.full(nodes.size, np.nan)
    slopes[idx] = a_rel
    table = (nodes, CubicHermiteSpline(nodes, values, _node_slopes(nodes, values, slopes), extrapolate=False))
    m._cache[key] = table
    return table


# Operations

def _check_domain(m: Mobility, z: np.ndarray, what: str):
    if np.any(z < 0.0) or np.any(z > m.ceiling):
        raise OutOfRange(f"{what}: arguments must lie in [0, {m.ceiling:g}]")


def f_of(m: Mobility, z):
    """f(z) = int_0^z sqrt(2 / m(r)) dr, vectorized over z."""
    z_arr = np.asarray(z, dtype=float)
    _check_domain(m, z_arr, 'f_of')
    if m.has_closed_form:
        result = m._f_closed(z_arr)
    else:
        nodes, values, interp = _f_table(m)
        flat = np.atleast_1d(z_arr).ravel()
        out = np.empty_like(flat)
        inside = flat <= nodes[-1]
        out[inside] = interp(flat[inside])
        for k in np.flatnonzero(~inside):
            out[k] = values[-1] + _quad(lambda r: float(_integrand_f(m)(r)), nodes[-1], flat[k])
        result = out.reshape(z_arr.shape)
    return float(result) if np.ndim(result) == 0 else result


def f_at_ceiling(m: Mobility) -> float:
    """f(S) for a finite ceiling, +inf otherwise."""
    if not m.finite_ceiling:
        return math.inf
    cached = m._cache.get('f_at_S')
    if cached is None:
        if m.family == DOUBLE_POWER:
            cached = m._beta_constants()[2]
        else:
            cached = float(_f_table(m)[1][-1])
        m._cache['f_at_S'] = cached
    return cached


def f_prime(m: Mobility, z):
    """f'(z) = sqrt(2 / m(z)); infinite where m vanishes."""
    with np.errstate(divide='ignore'):
        return np.sqrt(2.0 / m.value(z))


def f_inverse(m: Mobility, w):
    """g(w) = f^-1(w): bisection on the monotone map refined by Newton steps with g' = sqrt(m(g)/2)."""
    w_arr = np.asarray(w, dtype=float)
    flat = np.atleast_1d(w_arr).ravel().copy()
    if np.any(flat < 0.0):
        raise OutOfRange("f_inverse: argument must be nonnegative")
    top = f_at_ceiling(m)
    if np.any(flat >= top):
        raise OutOfRange(f"f_inverse: argument must be below f(S) = {top:.17g}")

    if m.has_closed_form:
        g = m._g_closed(flat)
        lo = np.zeros_like(flat)
        hi = np.full_like(flat, m.ceiling) if m.finite_ceiling else np.maximum(2.0 * g, 1.0)
    else:
        lo = np.zeros_like(flat)
        if m.finite_ceiling:
            hi = np.full_like(flat, m.ceiling)
        else:
            hi = np.ones_like(flat)
            for _ in range(200):
                short = f_of(m, hi) < flat
                if not np.any(short):
                    break
                hi[short] *= 2.0
        for _ in range(80):
            mid = 0.5 * (lo + hi)
            below = f_of(m, mid) < flat
            lo = np.where(below, mid, lo)
            hi = np.where(below, hi, mid)
        g = 0.5 * (lo + hi)

    # Newton refinement, kept inside the bracket
    positive = flat > 0.0
    for _ in range(8):
        fg = f_of(m, g)
        err = fg - flat
        if np.all(np.abs(err[positive]) <= INVERSE_RTOL * flat[positive]):
            break
        with np.errstate(divide='ignore', invalid='ignore'):
            step = err * np.sqrt(0.5 * m.value(g))
        candidate = g - np.nan_to_num(step)
        inside = (candidate >= lo) & (candidate <= hi)
        g = np.where(inside & positive, candidate, g)
    g[~positive] = 0.0
    result = g.reshape(w_arr.shape)
    return float(result) if np.ndim(result) == 0 else result


def g_prime(m: Mobility, w):
    """g'(w) = 1 / f'(g(w)) = sqrt(m(g(w)) / 2)."""
    return np.sqrt(0.5 * m.value(f_inverse(m, w)))


def g_second(m: Mobility, w):
    """g''(w) = m'(g(w)) / 4."""
    return 0.25 * m.derivative(f_inverse(m, w))


def h_of(m: Mobility, s0: float, z):
    """h(z) = int_{s0}^z (z - r) / m(r) dr, continuously extended to the boundary of [0, S]."""
    if not 0.0 < s0 < m.ceiling:
        raise OutOfRange(f"h_of: s0 must lie in (0, {m.ceiling:g}), got {s0}")
    z_arr = np.asarray(z, dtype=float)
    _check_domain(m, z_arr, 'h_of')
    if _h_has_closed_form(m):
        result = _h_closed(m, s0, z_arr)
    else:
        nodes, interp = _h_table(m, s0)
        flat = np.atleast_1d(z_arr).ravel()
        out = np.empty_like(flat)
        inside = flat <= nodes[-1]
        out[inside] = interp(flat[inside])
        for k in np.flatnonzero(~inside):
            out[k] = h_quad(m, s0, flat[k])
        result = out.reshape(z_arr.shape)
    result = np.maximum(result, 0.0)
    return float(result) if np.ndim(result) == 0 else result


def default_s0(mass: float, length: float, ceiling: float) -> float:
    """Reference point of h: the mean density clamped to [0.1 S', 0.9 S'], S' = min(S, 2 U / L)."""
    mean = mass / length
    s_ref = min(ceiling, 2.0 * mean)
    return float(np.clip(mean, 0.1 * s_ref, 0.9 * s_ref))


def convexity_ratio(m: Mobility, z):
    """f'''(z) f'(z) / f''(z)^2 = 3 - 2 m(z) m''(z) / m'(z)^2.

    Points with m'(z) = 0 give +inf when m''(z) < 0; when m''(z) = 0 as well
    the ratio is indeterminate and DerivativeVanishes is raised.
    """
    z_arr = np.asarray(z, dtype=float)
    d1 = m.derivative(z_arr)
    d2 = m.second_derivative(z_arr)
    flat_point = (d1 == 0.0)
    if np.any(flat_point & (d2 >= 0.0)):
        raise DerivativeVanishes("m' and m'' both vanish: convexity ratio is indeterminate")
    with np.errstate(divide='ignore', invalid='ignore'):
        ratio = 3.0 - 2.0 * m.value(z_arr) * d2 / (d1 * d1)
    ratio = np.where(flat_point, math.inf, ratio)
    return float(ratio) if np.ndim(ratio) == 0 else ratio


def sample_mesh(m: Mobility, size: int = VALIDATION_MESH_SIZE) -> np.ndarray:
    """Log-spaced interior mesh of (0, S), dense near the degenerate end points."""
    if not m.finite_ceiling:
        return np.geomspace(1e-8, 1e3, size)
    half = np.geomspace(1e-8 * m.ceiling, 0.5 * m.ceiling, size // 2)
    return np.unique(np.concatenate((half, m.ceiling - half)))


def ms_samples(m: Mobility, points: Sequence[float] = MS_SAMPLE_POINTS) -> Dict[str, List[float]]:
    """Values of m'(z)^2 f(z) approaching 0 (and m'(z)^2 (f(S) - f(z)) approaching S)."""
    scale = m.reference_scale
    lower = []
    for p in points:
        z = p * scale
        lower.append(float(m.derivative(z)) ** 2 * f_of(m, z))
    samples = {'lower': lower}
    if m.finite_ceiling:
        top = f_at_ceiling(m)
        upper = []
        for p in points:
            z = m.ceiling - p * scale
            upper.append(float(m.derivative(z)) ** 2 * (top - f_of(m, z)))
        samples['upper'] = upper
    return samples


def _strictly_decreasing(values: Sequence[float]) -> bool:
    return all(b < a * (1.0 - 1e-9) for a, b in zip(values, values[1:]))


@dataclass
class MobilityReport:
    """Outcome of validate(): one flag per structural condition."""
    lsc: bool
    sup_derivative: float
    sup_curvature: float
    pg_exponents: Optional[Tuple[float, float]]
    ms_ok: bool
    concavity_ok: bool
    positivity_ok: bool
    boundary_ok: bool
    convexity_ratio_min: float
    samples: Dict[str, List[float]] = field(default_factory=dict)

    def failed_condition(self) -> Optional[str]:
        """Name of the first violated condition, or None."""
        if not self.positivity_ok:
            return 'positivity'
        if not self.concavity_ok:
            return 'concavity'
        if not self.boundary_ok:
            return 'boundary-degeneracy'
        if not self.lsc and not self.ms_ok:
            return 'singularity-strength'
        return None

    def failed_label(self) -> Optional[str]:
        """The failed condition with its short code, e.g. 'singularity-strength (M-S)'."""
        name = self.failed_condition()
        return f"{name} ({CONDITION_CODES[name]})" if name else None

    @property
    def needs_cascade(self) -> bool:
        return not self.lsc

    def summary_lines(self) -> List[str]:
        lines = [
            f"positivity:           {'ok' if self.positivity_ok else 'FAILED'}",
            f"concavity:            {'ok' if self.concavity_ok else 'FAILED'}",
            f"boundary degeneracy:  {'ok' if self.boundary_ok else 'FAILED'}",
            f"lipschitz (lsc):      {self.lsc} (sup|m'| ~ {self.sup_derivative:.6g}, "
            f"sup(-m'' m) ~ {self.sup_curvature:.6g})",
            f"singularity strength: {'ok' if self.ms_ok else 'FAILED'}",
            f"growth exponents:     {self.pg_exponents if self.pg_exponents else 'n/a (finite ceiling)'}",
            f"min convexity ratio:  {self.convexity_ratio_min:.12g}",
        ]
        return lines


def _analytic_lsc(m: Mobility) -> Optional[bool]:
    if m.family in (LINEAR, REGULARIZED):
        return True
    if m.family in (POWER, DOUBLE_POWER):
        return all(beta == 1.0 for beta in m.exponents)
    return None


def _growth_exponents(m: Mobility) -> Optional[Tuple[float, float]]:
    if m.finite_ceiling:
        return None
    if m.family == LINEAR:
        return (1.0, 1.0)
    if m.family == POWER:
        beta = m.exponents[0]
        return (beta, beta)
    if m.family == REGULARIZED:
        return _growth_exponents(m.base)
    slope = float(m.derivative(m.table[0][-1] * 2.0))
    return (1.0, 1.0) if slope > 0.0 else (0.0, 0.0)


def _concavity_violation(m: Mobility, mesh: np.ndarray, d2: np.ndarray) -> Optional[float]:
    """First point where m fails to be concave, or None.

    Tabulated mobilities are judged on their data: the secant slopes of the
    table must not increase. The interpolant's m'' is not concavity-preserving.
    """
    source = m.base if m.family == REGULARIZED else m
    if source.family == CUSTOM:
        z, v = (np.asarray(col) for col in source.table)
        secant = np.diff(v) / np.diff(z)
        tol = CONCAVITY_TOL * max(1.0, float(np.max(np.abs(secant))))
        bad = np.flatnonzero(np.diff(secant) > tol)
        return float(z[bad[0] + 1]) if bad.size else None
    bad = np.flatnonzero(d2 > CONCAVITY_TOL)
    return float(mesh[bad[0]]) if bad.size else None


def validate(m: Mobility, sample_mesh_points: Optional[np.ndarray] = None, strict: bool = True) -> MobilityReport:
    """Check concavity, positivity, degeneracy at the end points, Lipschitz bounds,
    singularity strength and growth exponents of a mobility.

    With strict=True a positivity or concavity violation raises; otherwise the
    report carries the failed flag.
    """
    mesh = sample_mesh(m) if sample_mesh_points is None else np.asarray(sample_mesh_points, dtype=float)
    if np.any(mesh <= 0.0) or np.any(mesh >= m.ceiling):
        raise OutOfRange("validate: sample mesh must lie inside (0, S)")

    values = m.value(mesh)
    positivity_ok = bool(np.all(values > 0.0))
    if strict and not positivity_ok:
        bad = mesh[np.argmax(values <= 0.0)]
        raise NonPositiveMobility(f"{m.describe()}: m <= 0 at interior point z = {bad:.6g}")

    d2 = m.second_derivative(mesh)
    bad = _concavity_violation(m, mesh, d2)
    concavity_ok = bad is None
    if strict and not concavity_ok:
        raise NonConcaveMobility(f"{m.describe()}: m'' > 0 at z = {bad:.6g}")

    boundary_ok = abs(float(m.value(0.0))) <= 1e-12
    if m.finite_ceiling:
        boundary_ok = boundary_ok and abs(float(m.value(m.ceiling))) <= 1e-12

    d1 = m.derivative(mesh)
    sup_derivative = float(np.max(np.abs(d1)))
    sup_curvature = float(np.max(-d2 * values))
    lsc = _analytic_lsc(m)
    if lsc is None:
        lsc = sup_derivative <= LSC_BOUND and sup_curvature <= LSC_BOUND

    samples = ms_samples(m)
    if m.family in (POWER, DOUBLE_POWER):
        ms_ok = all(2.0 / 3.0 < beta <= 1.0 for beta in m.exponents)
    elif lsc:
        ms_ok = True
    else:
        ms_ok = all(_strictly_decreasing(vals) for vals in samples.values())

    ratio = convexity_ratio(m, mesh[d1 != 0.0]) if concavity_ok else np.array([-math.inf])
    finite = np.asarray(ratio)[np.isfinite(ratio)]
    ratio_min = float(np.min(finite)) if finite.size else math.inf

    return MobilityReport(
        lsc=bool(lsc),
        sup_derivative=sup_derivative,
        sup_curvature=sup_curvature,
        pg_exponents=_growth_exponents(m),
        ms_ok=bool(ms_ok),
        concavity_ok=concavity_ok,
        positivity_ok=positivity_ok,
        boundary_ok=bool(boundary_ok),
        convexity_ratio_min=ratio_min,
        samples=samples,
    )


def _root(fn, a: float, b: float) -> float:
    return optimize.brentq(fn, a, b, xtol=1e-300, rtol=4.0 * np.finfo(float).eps, maxiter=500)


def regularize(m: Mobility, delta: float) -> Mobility:
    """Shifted mobility m_delta with Lipschitz derivative.

    S infinite: m_delta(z) = m(z + z_delta) - delta with m(z_delta) = delta.
    S finite:   m_delta(z) = m(z1 + (z2 - z1) z / S) - delta with z1 < z2 the roots of m = delta.
    """
    if not delta > 0.0:
        raise DeltaTooLarge(f"delta must be positive, got {delta}")
    if m.family == LINEAR:
        # m(z + delta / c) - delta = c z
        return m

    if not m.finite_ceiling:
        hi = 1.0
        for _ in range(200):
            if float(m.value(hi)) > delta:
                break
            hi *= 2.0
        else:
            raise DeltaTooLarge(f"{m.describe()}: m(z) = {delta} has no root")
        z_delta = _root(lambda z: float(m.value(z)) - delta, 0.0, hi)
        return Mobility(family=REGULARIZED, base=m, delta=float(delta), shift=z_delta, stretch=1.0)

    S = m.ceiling
    if m.family == DOUBLE_POWER and m.exponents == (1.0, 1.0):
        disc = 0.25 * S * S - delta / m.scale
        if disc <= 0.0:
            raise DeltaTooLarge(f"{m.describe()}: delta = {delta} exceeds max m = {0.25 * S * S * m.scale}")
        stretch = 2.0 * math.sqrt(disc) / S
        # m(z1 + b z) - delta = b^2 m(z) for this family
        return Mobility.double_power(1.0, 1.0, S, scale=m.scale * stretch * stretch)

    peak = optimize.minimize_scalar(lambda z: -float(m.value(z)), bounds=(0.0, S),
                                    method='bounded', options={'xatol': 1e-12 * S})
    z_peak = float(peak.x)
    if float(m.value(z_peak)) <= delta:
        raise DeltaTooLarge(f"{m.describe()}: delta = {delta} is not below max m = {float(m.value(z_peak)):.6g}")
    z1 = _root(lambda z: float(m.value(z)) - delta, 0.0, z_peak)
    z2 = _root(lambda z: float(m.value(z)) - delta, z_peak, S)
    return Mobility(family=REGULARIZED, base=m, delta=float(delta), ceiling=S,
                    shift=z1, stretch=(z2 - z1) / S)
