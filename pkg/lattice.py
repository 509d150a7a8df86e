import logging
import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import List, Sequence, Tuple, Union

import numpy as np

from errors import DomainError

logger = logging.getLogger(__name__)

Site = Union[int, Sequence[int]]

MOMENTUM_TOL = 1e-12


@dataclass(frozen=True)
class TorusSpec:
    """
    The torus (Z/2N)^d with side = 2N

    Sites are integers in [0, side^d), mixed radix in row-major order:
    x = Σ_j x_j · side^(d-1-j), so the first coordinate is the slowest.
    d = 0 is a single isolated site.
    """
    d: int
    side: int

    @classmethod
    def single_site(cls) -> "TorusSpec":
        return cls(d=0, side=2)

    def __post_init__(self):
        if self.d < 0:
            raise DomainError(f"dimension must be nonnegative, got d={self.d}")
        if self.side < 2 or self.side % 2:
            raise DomainError(f"side must be even and >= 2, got side={self.side}")
        if self.side == 2 and self.d > 0:
            logger.warning(
                "side-2 torus: +1 and -1 neighbours coincide, each bond is counted once "
                "and Laplacian row sums are d/2, not 0"
            )

    @property
    def n_sites(self) -> int:
        return self.side ** self.d

    @property
    def shape(self) -> Tuple[int, ...]:
        return (self.side,) * self.d

    @cached_property
    def edges(self) -> List[Tuple[int, int]]:
        """Unordered nearest-neighbour pairs (x, y) with x < y, each listed once"""
        pairs = set()
        for x in range(self.n_sites):
            for y in neighbors(self, x):
                pairs.add((min(x, y), max(x, y)))
        return sorted(pairs)

    @cached_property
    def neighbor_table(self) -> List[List[int]]:
        return [neighbors(self, x) for x in range(self.n_sites)]


@dataclass(frozen=True)
class Momentum:
    """
    A point of the dual grid (2π/side)·Λ

    index holds the integers m_j in [0, side); components are 2π·m_j/side
    folded into the fundamental domain (−π, π].
    """
    index: Tuple[int, ...]
    side: int
    components: Tuple[float, ...] = field(init=False)

    def __post_init__(self):
        comps = []
        for m in self.index:
            if not 0 <= m < self.side:
                raise DomainError(f"momentum index {m} outside [0, {self.side})")
            k = 2.0 * math.pi * m / self.side
            if k > math.pi + MOMENTUM_TOL:
                k -= 2.0 * math.pi
            comps.append(k)
        object.__setattr__(self, "components", tuple(comps))

    @property
    def is_zero(self) -> bool:
        return all(m == 0 for m in self.index)

    def as_array(self) -> np.ndarray:
        return np.array(self.components, dtype=float)


def site_coords(spec: TorusSpec, x: int) -> Tuple[int, ...]:
    """Row-major coordinates of a site index"""
    if not 0 <= x < spec.n_sites:
        raise DomainError(f"site index {x} outside [0, {spec.n_sites})")
    if spec.d == 0:
        return ()
    return tuple(int(c) for c in np.unravel_index(x, spec.shape))


def site_index(spec: TorusSpec, coords: Sequence[int]) -> int:
    """Site index of a coordinate tuple (coordinates are taken mod side)"""
    if len(coords) != spec.d:
        raise DomainError(f"expected {spec.d} coordinates, got {len(coords)}")
    if spec.d == 0:
        return 0
    return int(np.ravel_multi_index(tuple(c % spec.side for c in coords), spec.shape))


def _as_index(spec: TorusSpec, x: Site) -> int:
    if isinstance(x, (int, np.integer)):
        if not 0 <= x < spec.n_sites:
            raise DomainError(f"site index {x} outside [0, {spec.n_sites})")
        return int(x)
    coords = tuple(x)
    if any(not 0 <= c < spec.side for c in coords):
        raise DomainError(f"site coordinates {coords} outside the torus")
    return site_index(spec, coords)


def neighbors(spec: TorusSpec, x: Site) -> List[int]:
    """
    Sites y with x ∼ y: y differs from x by ±1 mod side in exactly one coordinate

    On a side-2 torus the +1 and −1 steps land on the same site, so there are
    d neighbours instead of 2d.
    """
    xi = _as_index(spec, x)
    coords = site_coords(spec, xi)
    result = set()
    for j in range(spec.d):
        for step in (1, -1):
            shifted = list(coords)
            shifted[j] = (shifted[j] + step) % spec.side
            result.add(site_index(spec, shifted))
    return sorted(result)


def is_adjacent(spec: TorusSpec, x: Site, y: Site) -> bool:
    return _as_index(spec, y) in spec.neighbor_table[_as_index(spec, x)]


def laplacian_entry(spec: TorusSpec, x: Site, y: Site) -> float:
    """
    L(x, y) = d·1{x=y} − ½·1{x∼y}
    """
    xi, yi = _as_index(spec, x), _as_index(spec, y)
    if xi == yi:
        return float(spec.d)
    if yi in spec.neighbor_table[xi]:
        return -0.5
    return 0.0


def laplacian_matrix(spec: TorusSpec) -> np.ndarray:
    """Dense |Λ|×|Λ| Laplacian"""
    n = spec.n_sites
    L = np.eye(n) * spec.d
    for x, y in spec.edges:
        L[x, y] = L[y, x] = -0.5
    return L


def laplacian_quadratic_form(spec: TorusSpec, u: Sequence[float]) -> float:
    """
    ⟨Lu, u⟩ = ½ Σ_{x∼y} (u(x) − u(y))², summed over unordered edges
    """
    u = np.asarray(u, dtype=float)
    if u.shape != (spec.n_sites,):
        raise DomainError(f"vector has {u.size} entries, torus has {spec.n_sites} sites")
    if not spec.edges:
        return 0.0
    e = np.asarray(spec.edges)
    diff = u[e[:, 0]] - u[e[:, 1]]
    return 0.5 * float(np.dot(diff, diff))


def lhat(k: Momentum) -> float:
    """
    Fourier transform of the Laplacian: L̂(k) = Σ_j (1 − cos k_j), in [0, 2d]
    """
    return float(sum(1.0 - math.cos(c) for c in k.components))


def momentum_grid(spec: TorusSpec) -> List[Momentum]:
    """All |Λ| momenta, in the same row-major order as the sites"""
    return [Momentum(index=site_coords(spec, m), side=spec.side) for m in range(spec.n_sites)]


def momentum_from_components(spec: TorusSpec, components: Sequence[float]) -> Momentum:
    """Snap a momentum given as reals onto the grid; off-grid values are rejected"""
    if len(components) != spec.d:
        raise DomainError(f"expected {spec.d} momentum components, got {len(components)}")
    index = []
    for c in components:
        m = c * spec.side / (2.0 * math.pi)
        mi = round(m)
        if abs(m - mi) * 2.0 * math.pi / spec.side > 1e-9:
            raise DomainError(f"momentum component {c} is not a multiple of 2π/{spec.side}")
        index.append(int(mi) % spec.side)
    return Momentum(index=tuple(index), side=spec.side)


def negate_momentum(spec: TorusSpec, k: Momentum) -> Momentum:
    return Momentum(index=tuple((-m) % spec.side for m in k.index), side=spec.side)


def momentum_position(spec: TorusSpec, k: Momentum) -> int:
    """Flat position of k in momentum_grid (same encoding as sites)"""
    return site_index(spec, k.index)


def fourier_phases(spec: TorusSpec, k: Momentum) -> np.ndarray:
    """e^{ik·x} for every site x, in site order"""
    if spec.d == 0:
        return np.ones(1, dtype=complex)
    coords = np.array(np.unravel_index(np.arange(spec.n_sites), spec.shape)).T
    return np.exp(1j * coords @ (2.0 * math.pi * np.asarray(k.index) / spec.side))
