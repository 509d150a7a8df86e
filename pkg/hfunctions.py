"""
Periodic test functions h on the circle [0, β) and the functional Z(h)/Z(0)

h is stored through its weak derivative h′ (a StepFunction) together with the
convention h(0) = 0. Z(h) = Z(h + c) for every constant c, so nothing here
depends on the constant.
"""
import logging
import math
from dataclasses import dataclass
from typing import Callable, Dict, List, Sequence, Union

import numpy as np

from errors import DomainError
from worldlines import WorldlineConfig

logger = logging.getLogger(__name__)

BREAKPOINT_TOL = 1e-12      # relative to beta
INTEGRAL_TOL = 1e-10
GRID_TOL = 1e-9
GRID_POINTS = 2 ** 14


@dataclass(frozen=True, eq=False)
class StepFunction:
    """
    β-periodic, right-continuous piecewise-constant function

    values[i] holds on [breakpoints[i], breakpoints[i+1]); the last value holds
    on [breakpoints[-1], β). The first breakpoint is always 0.
    """
    beta: float
    breakpoints: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        if not self.beta > 0:
            raise DomainError(f"beta must be positive, got {self.beta}")
        bps = np.asarray(self.breakpoints, dtype=float).ravel()
        vals = np.asarray(self.values, dtype=float).ravel()
        if bps.size == 0 or bps.size != vals.size:
            raise DomainError("need one value per breakpoint and at least one piece")
        if bps[0] < 0 or bps[-1] >= self.beta:
            raise DomainError("breakpoints must lie in [0, beta)")
        if bps.size > 1 and np.any(np.diff(bps) <= 0):
            raise DomainError("breakpoints must be strictly increasing")
        if bps[0] > 0:
            bps = np.concatenate(([0.0], bps))
            vals = np.concatenate(([vals[-1]], vals))
        object.__setattr__(self, 'breakpoints', bps)
        object.__setattr__(self, 'values', vals)

    @classmethod
    def constant(cls, beta: float, value: float = 0.0) -> "StepFunction":
        return cls(beta, [0.0], [value])

    @classmethod
    def from_pieces(cls, beta: float, breakpoints: Sequence[float], values: Sequence[float]) -> "StepFunction":
        """
        Build from breakpoints that may fall outside [0, β) or carry rounding
        noise: times are reduced mod β, snapped and sorted, equal neighbours merged
        """
        tol = BREAKPOINT_TOL * beta
        bps = np.mod(np.asarray(breakpoints, dtype=float), beta)
        bps[np.abs(bps - beta) < tol] = 0.0
        vals = np.asarray(values, dtype=float)
        order = np.argsort(bps, kind='stable')
        bps, vals = bps[order], vals[order]
        keep = np.ones(bps.size, dtype=bool)
        keep[:-1] = np.diff(bps) > tol
        return cls(beta, bps[keep], vals[keep]).simplified()

    @property
    def lengths(self) -> np.ndarray:
        return np.diff(np.concatenate((self.breakpoints, [self.beta])))

    def __call__(self, t):
        t = np.mod(np.asarray(t, dtype=float), self.beta)
        idx = np.searchsorted(self.breakpoints, t, side='right') - 1
        return self.values[np.clip(idx, 0, None)]

    def integral(self) -> float:
        return math.fsum(self.values * self.lengths)

    def sup_norm(self) -> float:
        return float(np.max(np.abs(self.values)))

    def simplified(self) -> "StepFunction":
        """Merge neighbouring pieces with equal values (0 stays a breakpoint)"""
        keep = np.ones(self.values.size, dtype=bool)
        keep[1:] = self.values[1:] != self.values[:-1]
        return StepFunction(self.beta, self.breakpoints[keep], self.values[keep])

    def shifted(self, t0: float) -> "StepFunction":
        """s ↦ f(s + t0)"""
        return StepFunction.from_pieces(self.beta, self.breakpoints - t0, self.values)

    def scaled(self, c: float) -> "StepFunction":
        return StepFunction(self.beta, self.breakpoints, c * self.values)

    def __neg__(self) -> "StepFunction":
        return self.scaled(-1.0)

    def allclose(self, other: "StepFunction", atol: float = GRID_TOL) -> bool:
        """Pointwise agreement on the union of both breakpoint sets"""
        if abs(self.beta - other.beta) > BREAKPOINT_TOL * self.beta:
            return False
        pts = np.union1d(self.breakpoints, other.breakpoints)
        return bool(np.all(np.abs(self(pts) - other(pts)) <= atol))

    def to_dict(self) -> Dict:
        return {'beta': float(self.beta),
                'breakpoints': [float(b) for b in self.breakpoints],
                'values': [float(v) for v in self.values]}

    @classmethod
    def from_dict(cls, data: Dict) -> "StepFunction":
        return cls(float(data['beta']), data['breakpoints'], data['values'])


Selector = Union[str, Callable[[StepFunction, StepFunction], str]]


def step_function_from_fractions(beta: float, fractions: Sequence[float],
                                 values: Sequence[float]) -> StepFunction:
    """Breakpoints given as fractions of β"""
    return StepFunction(beta, np.asarray(fractions, dtype=float) * beta, values)


def check_h_derivative(hprime: StepFunction) -> None:
    """A derivative describes a periodic h only if it integrates to zero"""
    scale = max(1.0, hprime.beta * hprime.sup_norm())
    total = hprime.integral()
    if abs(total) > INTEGRAL_TOL * scale:
        raise DomainError(f"h' integrates to {total:.3e} over one period; periodic h needs 0")


def antiderivative(hprime: StepFunction, t) -> np.ndarray:
    """h(t) = ∫_0^t h′ with h(0) = 0, evaluated β-periodically"""
    t = np.mod(np.asarray(t, dtype=float), hprime.beta)
    cum = np.concatenate(([0.0], np.cumsum(hprime.values * hprime.lengths)))[:-1]
    idx = np.clip(np.searchsorted(hprime.breakpoints, t, side='right') - 1, 0, None)
    return cum[idx] + hprime.values[idx] * (t - hprime.breakpoints[idx])


def w_prime(r: float, n: int, beta: float) -> StepFunction:
    """
    W′_{r,n}(t) = r(−1)^⌊2ⁿt/β⌋: 2ⁿ pieces alternating +r, −r
    """
    if n < 1:
        raise DomainError(f"level n must be >= 1, got {n}")
    cells = 2 ** n
    bps = np.arange(cells) * (beta / cells)
    vals = r * (1.0 - 2.0 * (np.arange(cells) % 2))
    return StepFunction(beta, bps, vals)


def reflect_theta(f: StepFunction) -> StepFunction:
    """
    t ↦ f((β − t) mod β), right-continuous representative

    Piece [b_i, b_{i+1}) of f lands on [β − b_{i+1}, β − b_i).
    """
    beta = f.beta
    b = f.breakpoints
    new_bps = np.concatenate(([0.0], beta - b[:0:-1]))
    new_vals = f.values[::-1]
    return StepFunction(beta, new_bps, new_vals)


def _splice(first: StepFunction, second: StepFunction) -> StepFunction:
    """first on [0, β/2), second on [β/2, β)"""
    beta = first.beta
    half = 0.5 * beta
    bps = np.concatenate((first.breakpoints[first.breakpoints < half], [half],
                          second.breakpoints[second.breakpoints > half]))
    vals = np.where(bps < half, first(bps), second(bps))
    return StepFunction(beta, bps, vals).simplified()


def plus_part(hprime: StepFunction) -> StepFunction:
    """
    Weak derivative of h₊: f′ on (0, β/2) and −f′(θt) on (β/2, β)

    The induced h₊ satisfies h₊(t) = h₊(β − t).
    """
    check_h_derivative(hprime)
    return _splice(hprime, -reflect_theta(hprime))


def minus_part(hprime: StepFunction) -> StepFunction:
    """
    Weak derivative of h₋: −f′(θt) on (0, β/2) and f′ on (β/2, β)
    """
    check_h_derivative(hprime)
    return _splice(-reflect_theta(hprime), hprime)


def _choose(selector: Selector, plus: StepFunction, minus: StepFunction) -> StepFunction:
    branch = selector(plus, minus) if callable(selector) else selector
    if branch in ('+', 'plus'):
        return plus
    if branch in ('-', 'minus', '−'):
        return minus
    raise DomainError(f"selector must choose '+' or '-', got {branch!r}")


def symmetrize(hprime: StepFunction, t0: float, selector: Selector = '+') -> StepFunction:
    """
    Symmetrization of h at t0

    Shift so that t0 sits at the origin, take the + or − part, shift back.
    The result satisfies g(t0 + s) = g(t0 − s) and is symmetric about t0 + β/2.
    A callable selector receives both candidates (in the original frame) and
    returns '+' or '-'.
    """
    beta = hprime.beta
    if not 0.0 <= t0 < 0.5 * beta:
        raise DomainError(f"t0 must lie in [0, beta/2), got {t0}")
    check_h_derivative(hprime)
    tilde = hprime.shifted(t0)
    plus = plus_part(tilde).shifted(-t0)
    minus = minus_part(tilde).shifted(-t0)
    return _choose(selector, plus, minus)


def symmetrization_points(level: int, beta: float) -> List[float]:
    """Points used at a given level: 0, then β/4, then odd multiples of β/2ⁿ below β/2"""
    if level < 1:
        raise DomainError(f"level must be >= 1, got {level}")
    if level == 1:
        return [0.0]
    cell = beta / 2 ** level
    return [i * cell for i in range(1, 2 ** (level - 1), 2)]


def symmetrization_sequence(hprime: StepFunction, levels: int,
                            selector: Selector = '+') -> List[StepFunction]:
    """
    [h₁, …, h_levels]: each hₙ is obtained from hₙ₋₁ by symmetrizing at the
    new points of level n, and is a level-n snippet of hₙ₋₁
    """
    out = []
    current = hprime
    for level in range(1, levels + 1):
        for t0 in symmetrization_points(level, hprime.beta):
            current = symmetrize(current, t0, selector)
        out.append(current)
    return out


def is_snippet(g: StepFunction, f: StepFunction, n: int, tol: float = GRID_TOL) -> bool:
    """
    Whether g is a level-n snippet of f (both given by their derivatives)

    (1) for some k in [0, 2ⁿ) and a in {0, 1}: g(t) = f(k2⁻ⁿβ + (−1)^a t) on (0, 2⁻ⁿβ),
        up to an additive constant;
    (2) for n ≥ 1, g(m2⁻ⁿβ + t) = g(m2⁻ⁿβ − t) for every m and 0 < t < 2⁻ⁿβ.
    Checked on a grid of 2¹⁴ points.
    """
    if abs(g.beta - f.beta) > BREAKPOINT_TOL * f.beta:
        raise DomainError("snippet comparison needs a shared beta")
    if n < 0:
        raise DomainError(f"level must be nonnegative, got {n}")
    beta = f.beta
    cells = 2 ** n
    cell = beta / cells
    per_cell = max(16, GRID_POINTS // cells)
    t = (np.arange(per_cell) + 0.5) * (cell / per_cell)
    tol = tol * max(1.0, beta * max(g.sup_norm(), f.sup_norm()))

    if n >= 1:
        for m in range(cells):
            centre = m * cell
            if np.max(np.abs(antiderivative(g, centre + t) - antiderivative(g, centre - t))) > tol:
                return False

    g_vals = antiderivative(g, t)
    for k in range(cells):
        for sign in (1.0, -1.0):
            diff = g_vals - antiderivative(f, k * cell + sign * t)
            if np.ptp(diff) <= 2.0 * tol:
                return True
    return False


def zh_log_weight(cfg: WorldlineConfig, hprime: StepFunction, delta: float) -> float:
    """
    −(1/δ) Σ_x Σ_j h′(t^x_j)(−1)^(ξ_x + j), flips counted from j = 1
    """
    if not delta > 0:
        raise DomainError(f"delta must be positive, got {delta}")
    total = 0.0
    for xi, times in zip(cfg.xi, cfg.flips):
        if times.size == 0:
            continue
        signs = 1.0 - 2.0 * ((int(xi) + np.arange(1, times.size + 1)) % 2)
        total += float(np.dot(hprime(times), signs))
    return -total / delta


def zh_weight(cfg: WorldlineConfig, hprime: StepFunction, delta: float) -> float:
    """Per-configuration weight whose mean under μ is Z(h)/Z(0), h spatially constant"""
    return math.exp(zh_log_weight(cfg, hprime, delta))


def monte_carlo_selector(configs: Sequence[WorldlineConfig], delta: float) -> Callable[[StepFunction, StepFunction], str]:
    """
    Production selector for symmetrize: pick the branch with the larger
    estimated Z over the given samples, ties going to +
    """
    configs = list(configs)
    if not configs:
        raise DomainError("monte_carlo_selector needs at least one sample")

    def select(plus: StepFunction, minus: StepFunction) -> str:
        z_plus = math.fsum(zh_weight(c, plus, delta) for c in configs) / len(configs)
        z_minus = math.fsum(zh_weight(c, minus, delta) for c in configs) / len(configs)
        logger.debug("selector: Z(h+)=%.6g Z(h-)=%.6g", z_plus, z_minus)
        return '+' if z_plus >= z_minus else '-'

    return select
