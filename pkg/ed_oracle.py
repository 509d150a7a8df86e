"""
Exact thermal quantities of H = −λΣ_{x∼y}σ³σ³ − δΣσ¹ − νΣσ³ by dense diagonalization

Basis states are integers whose bit x is 0 for σ³_x = +1 and 1 for σ³_x = −1.
All Boltzmann factors use energies shifted by the ground-state energy.
"""
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Union

import numpy as np
import pandas as pd
from scipy import linalg
from scipy.special import gammaln, roots_legendre

from errors import ContractViolation, DomainError
from hfunctions import StepFunction, check_h_derivative
from lattice import Momentum, TorusSpec, fourier_phases, momentum_grid
from observables import frame_chat

logger = logging.getLogger(__name__)

MAX_SITES = 12
DEGENERATE_TOL = 1e-12
QUADRATURE_TOL = 1e-9


def sigma_z_diagonal(n_sites: int, x: int) -> np.ndarray:
    """Eigenvalues of σ³_x on the computational basis"""
    states = np.arange(2 ** n_sites)
    return 1.0 - 2.0 * ((states >> x) & 1)


def sigma_x_matrix(n_sites: int, x: int) -> np.ndarray:
    """σ¹_x on the computational basis"""
    dim = 2 ** n_sites
    states = np.arange(dim)
    out = np.zeros((dim, dim))
    out[states, states ^ (1 << x)] = 1.0
    return out


def build_hamiltonian(spec: TorusSpec, lam: float, delta: float, nu: float = 0.0) -> np.ndarray:
    """
    Dense real symmetric H^ν_Λ of size 2^|Λ|

    Each unordered edge of the torus enters once.
    """
    n = spec.n_sites
    if n > MAX_SITES:
        raise DomainError(f"exact diagonalization is capped at {MAX_SITES} sites, torus has {n}")
    dim = 2 ** n
    states = np.arange(dim)
    spins = [sigma_z_diagonal(n, x) for x in range(n)]
    diag = np.zeros(dim)
    for x, y in spec.edges:
        diag -= lam * spins[x] * spins[y]
    for x in range(n):
        diag -= nu * spins[x]
    H = np.diag(diag)
    for x in range(n):
        H[states, states ^ (1 << x)] -= delta
    return H


@dataclass(eq=False)
class SpectralDecomposition:
    """
    Eigenpairs of H with the σ³ operators rotated into the eigenbasis

    energies are ascending; vectors[:, m] is the m-th eigenvector. Rotated
    operators are built on first use and cached.
    """
    spec: TorusSpec
    lam: float
    delta: float
    nu: float
    energies: np.ndarray
    vectors: np.ndarray
    _sz_cache: Dict[int, np.ndarray] = field(default_factory=dict, repr=False)

    @property
    def dim(self) -> int:
        return self.energies.size

    @property
    def shifted_energies(self) -> np.ndarray:
        return self.energies - self.energies[0]

    def rotate_diagonal(self, diag: np.ndarray) -> np.ndarray:
        """Vᵀ diag(d) V for an operator diagonal in the computational basis"""
        return self.vectors.T @ (np.asarray(diag)[:, None] * self.vectors)

    def sz(self, x: int) -> np.ndarray:
        if not 0 <= x < self.spec.n_sites:
            raise DomainError(f"site index {x} outside [0, {self.spec.n_sites})")
        if x not in self._sz_cache:
            self._sz_cache[x] = self.rotate_diagonal(sigma_z_diagonal(self.spec.n_sites, x))
        return self._sz_cache[x]

    def reconstruct(self) -> np.ndarray:
        return (self.vectors * self.energies) @ self.vectors.T


def decompose(spec: TorusSpec, lam: float, delta: float, nu: float = 0.0) -> SpectralDecomposition:
    H = build_hamiltonian(spec, lam, delta, nu)
    if spec.n_sites == MAX_SITES:
        logger.info("diagonalizing at the size cap (%d states)", H.shape[0])
    energies, vectors = linalg.eigh(H)
    return SpectralDecomposition(spec=spec, lam=lam, delta=delta, nu=nu,
                                 energies=energies, vectors=vectors)


def _boltzmann(decomp: SpectralDecomposition, beta: float) -> np.ndarray:
    return np.exp(-beta * decomp.shifted_energies)


def thermal_expectation(decomp: SpectralDecomposition, beta: float, Q: np.ndarray) -> float:
    """
    tr(e^{−βH}Q)/tr(e^{−βH}); Q is a dense matrix or the diagonal of an
    operator diagonal in the computational basis
    """
    Q = np.asarray(Q)
    V = decomp.vectors
    if Q.ndim == 1 and Q.shape == (decomp.dim,):
        diag = np.einsum('im,i,im->m', V, Q, V)
    elif Q.shape == (decomp.dim, decomp.dim):
        diag = np.einsum('im,ij,jm->m', V, Q, V)
    else:
        raise DomainError(f"observable of shape {Q.shape} does not act on dimension {decomp.dim}")
    w = _boltzmann(decomp, beta)
    return float(np.dot(w, diag.real) / w.sum())


def schwinger_exact(decomp: SpectralDecomposition, beta: float, x: int, y: int, t: float) -> float:
    """
    tr(e^{−(β−t)H}σ³_y e^{−tH}σ³_x)/tr(e^{−βH}) for 0 ≤ t < β
    """
    if not 0.0 <= t < beta:
        raise DomainError(f"time {t} outside [0, {beta})")
    return float(schwinger_grid(decomp, beta, x, y, np.array([t]))[0])


def schwinger_grid(decomp: SpectralDecomposition, beta: float, x: int, y: int,
                   times: np.ndarray) -> np.ndarray:
    """Σ_mn e^{−(β−t)E_m}e^{−tE_n}⟨m|σ_y|n⟩⟨n|σ_x|m⟩/Z at each t"""
    E = decomp.shifted_energies
    times = np.asarray(times, dtype=float)
    P = decomp.sz(y) * decomp.sz(x).T
    left = np.exp(-np.outer(beta - times, E))
    right = np.exp(-np.outer(times, E))
    Z = _boltzmann(decomp, beta).sum()
    return np.einsum('qm,mn,qn->q', left, P, right) / Z


def _time_kernel(decomp: SpectralDecomposition, beta: float, j: int) -> np.ndarray:
    """
    I_mn = ∫_0^β e^{−(β−t)E_m − tE_n + ilt} dt = (e^{−βE_n} − e^{−βE_m})/(E_m − E_n + il)

    with the removable singularity E_m = E_n, j = 0 replaced by β e^{−βE_m}.
    """
    E = decomp.shifted_energies
    Em, En = E[:, None], E[None, :]
    gap = Em - En
    # e^{−βE_n} − e^{−βE_m} without overflow on either side of the diagonal
    num = np.where(gap >= 0.0,
                   -np.exp(-beta * En) * np.expm1(-beta * np.maximum(gap, 0.0)),
                   np.exp(-beta * Em) * np.expm1(beta * np.minimum(gap, 0.0)))
    if j == 0:
        degenerate = np.abs(gap) < DEGENERATE_TOL
        safe = np.where(degenerate, 1.0, gap)
        return np.where(degenerate, beta * np.exp(-beta * Em) * np.ones_like(En), num / safe)
    l = 2.0 * math.pi * j / beta
    return num / (gap + 1j * l)


def _fourier_spin(decomp: SpectralDecomposition, spec: TorusSpec, k: Momentum) -> np.ndarray:
    """Σ_x e^{ik·x} σ³_x in the eigenbasis"""
    phases = fourier_phases(spec, k)
    n = spec.n_sites
    diag = sum(phases[x] * sigma_z_diagonal(n, x) for x in range(n))
    V = decomp.vectors
    return V.T @ (diag[:, None] * V)


def _check_real(value: complex, what: str) -> float:
    if abs(value.imag) > 1e-10 * max(1.0, abs(value.real)):
        raise ContractViolation(f"{what} has imaginary residue {value.imag:.3e}")
    return value.real


def _nonnegative(value: float, what: str) -> float:
    if value < 0.0:
        if value < -1e-10:
            logger.warning("%s = %.3e is negative beyond round-off", what, value)
            return value
        return 0.0
    return value


def chat_exact(decomp: SpectralDecomposition, spec: TorusSpec, beta: float,
               k: Momentum, j: Union[int, float]) -> float:
    """
    ĉ(k,l) = Σ_x e^{ik·x} ∫_0^β c((0,0),(x,t)) e^{ilt} dt, l = 2πj/β
    """
    if not float(j).is_integer():
        raise DomainError(f"frequency index {j} is not an integer")
    j = int(j)
    Z = _boltzmann(decomp, beta).sum()
    S = _fourier_spin(decomp, spec, k)
    value = np.sum(_time_kernel(decomp, beta, j) * S * decomp.sz(0).T) / Z
    return _nonnegative(_check_real(complex(value), f"chat({k.index}, {j})"), f"chat({k.index}, {j})")


def chat_exact_grid(decomp: SpectralDecomposition, spec: TorusSpec, beta: float, j_max: int) -> np.ndarray:
    """ĉ for every k and j = −J..J, shape (|Λ|, 2J+1)"""
    Z = _boltzmann(decomp, beta).sum()
    A0T = decomp.sz(0).T
    kernels = {j: _time_kernel(decomp, beta, j) for j in range(-j_max, j_max + 1)}
    out = np.empty((spec.n_sites, 2 * j_max + 1))
    for kp, k in enumerate(momentum_grid(spec)):
        SA = _fourier_spin(decomp, spec, k) * A0T
        for jp, j in enumerate(range(-j_max, j_max + 1)):
            what = f"chat({k.index}, {j})"
            out[kp, jp] = _nonnegative(_check_real(complex(np.sum(kernels[j] * SA) / Z), what), what)
    return out


def chat_table_exact(decomp: SpectralDecomposition, spec: TorusSpec, beta: float, j_max: int) -> pd.DataFrame:
    """Same schema as the Monte Carlo ĉ table, with se = 0"""
    mean = chat_exact_grid(decomp, spec, beta, j_max)
    return frame_chat(spec, beta, decomp.lam, decomp.delta, j_max, mean, np.zeros_like(mean))


def duhamel_exact(decomp: SpectralDecomposition, beta: float, x: int) -> float:
    """b(x) = ∫_0^β c((0,0),(x,t)) dt"""
    Z = _boltzmann(decomp, beta).sum()
    P = decomp.sz(x) * decomp.sz(0).T
    return float(np.sum(_time_kernel(decomp, beta, 0) * P) / Z)


def susceptibility_exact(decomp: SpectralDecomposition, spec: TorusSpec, beta: float) -> float:
    """χ = ĉ(0,0) = Σ_x b(x)"""
    return chat_exact(decomp, spec, beta, momentum_grid(spec)[0], 0)


def bubble_exact(decomp: SpectralDecomposition, spec: TorusSpec, beta: float,
                 nodes: int = 64, max_nodes: int = 1024) -> float:
    """
    B = Σ_x ∫_0^β c(x,t)² dt by Gauss–Legendre quadrature

    c(x,·) is entire, so the node count is doubled until two successive
    rules agree to QUADRATURE_TOL.
    """
    previous = None
    while nodes <= max_nodes:
        u, w = roots_legendre(nodes)
        t = 0.5 * beta * (u + 1.0)
        w = 0.5 * beta * w
        total = 0.0
        for x in range(spec.n_sites):
            c = schwinger_grid(decomp, beta, 0, x, t)
            total += float(np.dot(w, c * c))
        if previous is not None and abs(total - previous) < QUADRATURE_TOL:
            return total
        previous = total
        nodes *= 2
    raise ContractViolation(f"bubble quadrature did not converge with {max_nodes} nodes")


def magnetization(spec: TorusSpec, beta: float, lam: float, delta: float, nu: float) -> float:
    """Σ_x ⟨σ³_x⟩ in the state of H^ν"""
    decomp = decompose(spec, lam, delta, nu)
    total = sum(sigma_z_diagonal(spec.n_sites, x) for x in range(spec.n_sites))
    return thermal_expectation(decomp, beta, total)


def flip_density_exact(decomp: SpectralDecomposition, beta: float) -> float:
    """
    μ|D|/|Λ| = βδΣ_x⟨σ¹_x⟩/|Λ| at ν = 0, with δΣ⟨σ¹⟩ = −⟨H⟩ − λΣ_{x∼y}⟨σ³σ³⟩
    """
    if decomp.nu != 0.0:
        raise DomainError("the flip density is defined at zero field")
    n = decomp.spec.n_sites
    w = _boltzmann(decomp, beta)
    energy = float(np.dot(w, decomp.energies) / w.sum())
    bond = 0.0
    if decomp.spec.edges:
        bonds = sum(sigma_z_diagonal(n, x) * sigma_z_diagonal(n, y) for x, y in decomp.spec.edges)
        bond = thermal_expectation(decomp, beta, bonds)
    return beta * (-energy - decomp.lam * bond) / n


def susceptibility_via_field(spec: TorusSpec, beta: float, lam: float, delta: float,
                             eps: float = 1e-4) -> float:
    """
    χ as the ν-derivative at 0 of the per-site magnetization, by central difference
    """
    n = spec.n_sites
    up = magnetization(spec, beta, lam, delta, eps) / n
    down = magnetization(spec, beta, lam, delta, -eps) / n
    return (up - down) / (2.0 * eps)


@dataclass(frozen=True)
class ChiPartials:
    chi: float
    dchi_dlambda: float
    dchi_ddelta: float
    err_lambda: float
    err_delta: float


def _chi(spec: TorusSpec, beta: float, lam: float, delta: float) -> float:
    return susceptibility_exact(decompose(spec, lam, delta), spec, beta)


def richardson_derivative(f, x0: float, step: float, allow_below: bool = True):
    """
    Central difference at step h and h/2 combined by one Richardson step

    Returns (extrapolated derivative, |extrapolated − raw|). When the stencil
    would step below zero and that is not allowed, the second-order one-sided
    stencil is used instead.
    """
    def diff(h):
        if x0 - h >= 0.0 or allow_below:
            return (f(x0 + h) - f(x0 - h)) / (2.0 * h)
        return (-3.0 * f(x0) + 4.0 * f(x0 + h) - f(x0 + 2.0 * h)) / (2.0 * h)

    raw = diff(step)
    half = diff(0.5 * step)
    extrap = (4.0 * half - raw) / 3.0
    return extrap, abs(extrap - raw)


def chi_partials(spec: TorusSpec, beta: float, lam: float, delta: float,
                 step: float = 1e-3) -> ChiPartials:
    """∂χ/∂λ and ∂χ/∂δ by Richardson-extrapolated finite differences of susceptibility_exact"""
    if not step > 0:
        raise DomainError("finite-difference step must be positive")
    if lam < 0:
        raise DomainError(f"lambda must be >= 0, got {lam}")
    if delta - step <= 0.0:
        raise DomainError(f"delta={delta} leaves the domain when stepped by {step}")
    chi = _chi(spec, beta, lam, delta)
    d_lam, e_lam = richardson_derivative(lambda v: _chi(spec, beta, v, delta), lam, step,
                                         allow_below=False)
    d_del, e_del = richardson_derivative(lambda v: _chi(spec, beta, lam, v), delta, step)
    return ChiPartials(chi=chi, dchi_dlambda=d_lam, dchi_ddelta=d_del,
                       err_lambda=e_lam, err_delta=e_del)


def inverse_chi_partials(spec: TorusSpec, beta: float, lam: float, delta: float,
                         step: float = 1e-3) -> ChiPartials:
    """Same as chi_partials for χ⁻¹ (the chi field holds χ⁻¹)"""
    if delta - step <= 0.0:
        raise DomainError(f"delta={delta} leaves the domain when stepped by {step}")

    def inv(lv: float, dv: float) -> float:
        return 1.0 / _chi(spec, beta, lv, dv)

    d_lam, e_lam = richardson_derivative(lambda v: inv(v, delta), lam, step, allow_below=False)
    d_del, e_del = richardson_derivative(lambda v: inv(lam, v), delta, step)
    return ChiPartials(chi=inv(lam, delta), dchi_dlambda=d_lam, dchi_ddelta=d_del,
                       err_lambda=e_lam, err_delta=e_del)


# Free sites (λ = 0): closed forms for the even-conditioned Poisson base law

def even_poisson_pmf(k: int, mean: float) -> float:
    """P(|D| = k) for a Poisson(mean) count conditioned even: mean^k/(k!·cosh(mean))"""
    if k < 0 or k % 2:
        return 0.0
    if mean == 0.0:
        return 1.0 if k == 0 else 0.0
    return math.exp(k * math.log(mean) - gammaln(k + 1) - math.log(math.cosh(mean)))


def even_poisson_mean(mean: float) -> float:
    """E|D| = mean·tanh(mean)"""
    return mean * math.tanh(mean)


def free_site_zeta(r: float, beta: float, delta: float) -> float:
    """ζ(r) for one free site: Σ_k P(2k)cosh(r/δ)^{2k} = cosh(δβ·cosh(r/δ))/cosh(δβ)"""
    return math.cosh(delta * beta * math.cosh(r / delta)) / math.cosh(delta * beta)


def free_site_zratio(hprime: StepFunction, delta: float) -> float:
    """
    Exact Z(h)/Z(0) for one free site

    Flips arrive at rate δ; a flip leaving spin s multiplies the weight by
    exp(−h′(t)s/δ). Over a piece of constant h′ the two-state evolution is a
    matrix exponential; the product around the circle, traced over the
    initial spin, is divided by the probability of an even count.
    """
    check_h_derivative(hprime)
    beta = hprime.beta
    cache: Dict[tuple, np.ndarray] = {}
    M = np.eye(2)
    for v, length in zip(hprime.values, hprime.lengths):
        key = (float(v), float(length))
        if key not in cache:
            G = np.array([[-delta, delta * math.exp(v / delta)],
                          [delta * math.exp(-v / delta), -delta]])
            cache[key] = linalg.expm(G * length)
        M = M @ cache[key]
    p_even = math.exp(-delta * beta) * math.cosh(delta * beta)
    return 0.5 * (M[0, 0] + M[1, 1]) / p_even


def single_site_schwinger(t: float, beta: float, delta: float) -> float:
    """cosh(δ(β − 2t))/cosh(δβ)"""
    return math.cosh(delta * (beta - 2.0 * t)) / math.cosh(delta * beta)


def single_site_susceptibility(beta: float, delta: float) -> float:
    """tanh(δβ)/δ"""
    return math.tanh(delta * beta) / delta


def single_site_bubble(beta: float, delta: float) -> float:
    """(β/2 + sinh(2δβ)/(4δ))/cosh²(δβ)"""
    return (0.5 * beta + math.sinh(2.0 * delta * beta) / (4.0 * delta)) / math.cosh(delta * beta) ** 2


def export_debug_csv(decomp: SpectralDecomposition, beta: float, out_dir: Union[str, Path],
                     time_grid: int = 64) -> None:
    """Eigenvalues and the c(x,t) grid as CSV files"""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    pd.DataFrame({'m': np.arange(decomp.dim), 'energy': decomp.energies}).to_csv(
        out / 'eigenvalues.csv', index=False)
    times = np.arange(time_grid) * (beta / time_grid)
    rows = []
    for x in range(decomp.spec.n_sites):
        for t, c in zip(times, schwinger_grid(decomp, beta, 0, x, times)):
            rows.append({'x_index': x, 't': t, 'mean': c, 'se': 0.0})
    pd.DataFrame(rows).to_csv(out / 'schwinger_exact.csv', index=False)


def schwinger_table_exact(decomp: SpectralDecomposition, beta: float, time_grid: int = 64) -> pd.DataFrame:
    times = np.arange(time_grid) * (beta / time_grid)
    frames = []
    for x in range(decomp.spec.n_sites):
        frames.append(pd.DataFrame({'x_index': x, 't': times,
                                    'mean': schwinger_grid(decomp, beta, 0, x, times), 'se': 0.0}))
    return pd.concat(frames, ignore_index=True)
