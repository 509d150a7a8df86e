import json
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Sequence, Tuple, Union

import numpy as np

from errors import ContractViolation, DomainError
from lattice import Momentum, TorusSpec, fourier_phases

logger = logging.getLogger(__name__)

FREQUENCY_TOL = 1e-9


@dataclass
class WorldlineConfig:
    """
    Space–time spin configuration on Λ × [0, β)

    xi[x] is the initial spin exponent ξ_x and flips[x] the sorted flip times
    D_x in [0, β). The trajectory is σ(x,t) = (−1)^(ξ_x + #{flips ≤ t}).
    """
    beta: float
    xi: np.ndarray
    flips: List[np.ndarray]

    def __post_init__(self):
        self.xi = np.asarray(self.xi, dtype=np.int8) % 2
        self.flips = [np.asarray(f, dtype=float) for f in self.flips]

    @classmethod
    def all_up(cls, n_sites: int, beta: float) -> "WorldlineConfig":
        return cls(beta=beta, xi=np.zeros(n_sites, dtype=np.int8),
                   flips=[np.empty(0) for _ in range(n_sites)])

    @property
    def n_sites(self) -> int:
        return len(self.flips)

    def copy(self) -> "WorldlineConfig":
        return WorldlineConfig(beta=self.beta, xi=self.xi.copy(), flips=[f.copy() for f in self.flips])

    def validate(self) -> None:
        if not self.beta > 0:
            raise DomainError(f"beta must be positive, got {self.beta}")
        if self.xi.shape != (self.n_sites,):
            raise DomainError("one xi bit per site is required")
        for x, f in enumerate(self.flips):
            if f.size % 2:
                raise DomainError(f"site {x} has an odd number of flips ({f.size})")
            if f.size and (f[0] < 0.0 or f[-1] >= self.beta):
                raise DomainError(f"site {x} has flip times outside [0, beta)")
            if f.size > 1 and np.any(np.diff(f) <= 0.0):
                raise DomainError(f"site {x} flip times are not strictly increasing")

    def to_dict(self) -> Dict:
        return {
            'beta': float(self.beta),
            'sites': [{'xi': int(b), 'flips': [float(t) for t in f]}
                      for b, f in zip(self.xi, self.flips)],
        }

    @classmethod
    def from_dict(cls, data: Dict) -> "WorldlineConfig":
        try:
            cfg = cls(beta=float(data['beta']),
                      xi=[int(s['xi']) for s in data['sites']],
                      flips=[[float(t) for t in s['flips']] for s in data['sites']])
        except (KeyError, TypeError, ValueError) as exc:
            raise ContractViolation(f"malformed worldline document: {exc}") from exc
        cfg.validate()
        return cfg


def save_config(cfg: WorldlineConfig, path: Union[str, Path]) -> None:
    Path(path).write_text(json.dumps(cfg.to_dict()))


def load_config(path: Union[str, Path]) -> WorldlineConfig:
    return WorldlineConfig.from_dict(json.loads(Path(path).read_text()))


def _check_site(cfg: WorldlineConfig, x: int) -> None:
    if not 0 <= x < cfg.n_sites:
        raise DomainError(f"site index {x} outside [0, {cfg.n_sites})")


def _spin(cfg: WorldlineConfig, x: int, t: float) -> int:
    count = int(np.searchsorted(cfg.flips[x], t, side='right'))
    return -1 if (int(cfg.xi[x]) + count) % 2 else 1


def spin_at(cfg: WorldlineConfig, x: int, t: float) -> int:
    """σ(x,t) = (−1)^(ξ_x + |D_x ∩ [0,t]|), right-continuous in t"""
    _check_site(cfg, x)
    if not 0.0 <= t < cfg.beta:
        raise DomainError(f"time {t} outside [0, {cfg.beta})")
    return _spin(cfg, x, t)


def constant_intervals(cfg: WorldlineConfig, x: int) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    Pieces [a_i, b_i) of constant spin covering [0, β), with their spins
    """
    f = cfg.flips[x]
    starts = np.concatenate(([0.0], f))
    ends = np.concatenate((f, [cfg.beta]))
    s0 = -1.0 if cfg.xi[x] else 1.0
    spins = s0 * (1.0 - 2.0 * (np.arange(f.size + 1) % 2))
    return starts, ends, spins


def interval_overlap(cfg: WorldlineConfig, x: int, y: int, a: float, b: float) -> float:
    """
    ∫_a^b σ(x,t)σ(y,t) dt for 0 ≤ a ≤ b ≤ β

    The product changes sign at every flip of either site, so the integral is
    an alternating sum of the gaps between the merged flip times.
    """
    if b <= a:
        return 0.0
    fx, fy = cfg.flips[x], cfg.flips[y]
    inner = np.concatenate((fx[(fx > a) & (fx < b)], fy[(fy > a) & (fy < b)]))
    inner.sort()
    pts = np.concatenate(([a], inner, [b]))
    lengths = np.diff(pts)
    signs = 1.0 - 2.0 * (np.arange(lengths.size) % 2)
    start = _spin(cfg, x, a) * _spin(cfg, y, a)
    return float(start * np.dot(signs, lengths))


def arc_overlap(cfg: WorldlineConfig, x: int, y: int, a: float, b: float) -> float:
    """Overlap on the circular arc running forward from a to b (wraps through 0 when a > b)"""
    if a <= b:
        return interval_overlap(cfg, x, y, a, b)
    return interval_overlap(cfg, x, y, a, cfg.beta) + interval_overlap(cfg, x, y, 0.0, b)


def overlap_integral(cfg: WorldlineConfig, x: int, y: int) -> float:
    """∫_0^β σ(x,t)σ(y,t) dt, symmetric in (x, y) and within [−β, β]"""
    _check_site(cfg, x)
    _check_site(cfg, y)
    return interval_overlap(cfg, x, y, 0.0, cfg.beta)


def _check_sites_match(cfg: WorldlineConfig, spec: TorusSpec) -> None:
    if cfg.n_sites != spec.n_sites:
        raise DomainError(f"configuration has {cfg.n_sites} sites, torus has {spec.n_sites}")


def interaction_action(cfg: WorldlineConfig, spec: TorusSpec, lam: float) -> float:
    """
    λ Σ_{x∼y} ∫_0^β σ(x,t)σ(y,t) dt over unordered edges

    This is the log-weight of cfg relative to the free measure.
    """
    _check_sites_match(cfg, spec)
    if lam == 0.0:
        return 0.0
    return lam * math.fsum(interval_overlap(cfg, x, y, 0.0, cfg.beta) for x, y in spec.edges)


def total_flip_count(cfg: WorldlineConfig) -> int:
    return int(sum(f.size for f in cfg.flips))


def energy_estimator(cfg: WorldlineConfig, spec: TorusSpec, lam: float) -> float:
    """
    Per-configuration estimator of ⟨H⟩ at ν=0: −(λ/β)Σ_{x∼y}∫σσ − |D|/β
    """
    return -(interaction_action(cfg, spec, lam) + total_flip_count(cfg)) / cfg.beta


def frequency_index(beta: float, l: float) -> int:
    """The integer j with l = 2πj/β; anything off that grid is rejected"""
    j = l * beta / (2.0 * math.pi)
    jr = round(j)
    if abs(j - jr) > FREQUENCY_TOL:
        raise DomainError(f"frequency {l} is not on the grid (2π/β)Z for beta={beta}")
    return int(jr)


def _as_frequency_index(j: Union[int, float]) -> int:
    if isinstance(j, (int, np.integer)):
        return int(j)
    jr = round(j)
    if abs(j - jr) > FREQUENCY_TOL:
        raise DomainError(f"frequency index {j} is not an integer")
    return int(jr)


def time_fourier(cfg: WorldlineConfig, x: int, j_values: Sequence[int]) -> np.ndarray:
    """
    ∫_0^β σ(x,t) e^{ilt} dt with l = 2πj/β, for each j

    Each constant piece [a,b) with spin s contributes s(e^{ilb} − e^{ila})/(il),
    or s(b − a) when l = 0.
    """
    j_values = np.asarray(j_values, dtype=int)
    starts, ends, spins = constant_intervals(cfg, x)
    out = np.empty(j_values.size, dtype=complex)
    zero = j_values == 0
    out[zero] = np.dot(spins, ends - starts)
    if np.any(~zero):
        l = 2.0 * math.pi * j_values[~zero] / cfg.beta
        phase_diff = np.exp(1j * np.outer(l, ends)) - np.exp(1j * np.outer(l, starts))
        out[~zero] = (phase_diff @ spins) / (1j * l)
    return out


def fourier_transform_sigma(cfg: WorldlineConfig, spec: TorusSpec, k: Momentum,
                            j: Union[int, float]) -> complex:
    """
    σ̂(k,l) = Σ_x e^{ik·x} ∫_0^β σ(x,t) e^{ilt} dt with l = 2πj/β
    """
    _check_sites_match(cfg, spec)
    jj = _as_frequency_index(j)
    phases = fourier_phases(spec, k)
    per_site = np.array([time_fourier(cfg, x, [jj])[0] for x in range(cfg.n_sites)])
    return complex(np.dot(phases, per_site))


def spin_grid(cfg: WorldlineConfig, n_times: int) -> np.ndarray:
    """σ(x, mβ/T) for all sites x and m = 0..T−1, shape (|Λ|, T)"""
    times = np.arange(n_times) * (cfg.beta / n_times)
    grid = np.empty((cfg.n_sites, n_times), dtype=np.int8)
    for x, f in enumerate(cfg.flips):
        counts = np.searchsorted(f, times, side='right')
        grid[x] = 1 - 2 * ((cfg.xi[x] + counts) % 2)
    return grid


# Mutations. Each keeps every flip list even and sorted.

def flip_line(cfg: WorldlineConfig, x: int) -> None:
    """σ(x,·) → −σ(x,·)"""
    cfg.xi[x] ^= 1


def insert_pair(cfg: WorldlineConfig, x: int, s: float, t: float) -> None:
    """Toggle σ(x,·) on [min(s,t), max(s,t)) by adding both times as flips"""
    cfg.flips[x] = np.sort(np.concatenate((cfg.flips[x], [s, t])))


def remove_pair(cfg: WorldlineConfig, x: int, i: int, j: int) -> None:
    """Remove flips i and j; σ(x,·) toggles on [t_i, t_j)"""
    cfg.flips[x] = np.delete(cfg.flips[x], [i, j])


def shift_arc(flips: np.ndarray, i: int, new_t: float) -> Tuple[float, float]:
    """
    Arc swept when flip i moves to new_t inside the gap between its circular neighbours

    Returned as (a, b) running forward from a to b; a > b means the arc wraps through 0.
    """
    old_t = float(flips[i])
    n = flips.size
    crosses = (i == 0 and new_t > flips[-1]) or (i == n - 1 and new_t < flips[0])
    lo, hi = min(old_t, new_t), max(old_t, new_t)
    return (hi, lo) if crosses else (lo, hi)


def move_flip(cfg: WorldlineConfig, x: int, i: int, new_t: float) -> None:
    """
    Move flip i of site x to new_t (inside its circular gap)

    When the swept arc wraps through 0, σ(x,0) changes and ξ_x flips with it.
    """
    a, b = shift_arc(cfg.flips[x], i, new_t)
    f = np.delete(cfg.flips[x], i)
    cfg.flips[x] = np.sort(np.concatenate((f, [new_t])))
    if a > b:
        cfg.xi[x] ^= 1


def global_flip(cfg: WorldlineConfig) -> WorldlineConfig:
    """Copy with every ξ_x negated"""
    out = cfg.copy()
    out.xi ^= 1
    return out
