import math
import sys

import numpy as np
import pytest

from ed_oracle import (build_hamiltonian, bubble_exact, chat_exact, chat_exact_grid,
                       chat_table_exact, chi_partials, decompose, duhamel_exact, even_poisson_mean,
                       flip_density_exact,
                       even_poisson_pmf, export_debug_csv, free_site_zeta, free_site_zratio,
                       inverse_chi_partials, richardson_derivative, schwinger_exact, schwinger_grid,
                       sigma_x_matrix, single_site_bubble, single_site_schwinger,
                       single_site_susceptibility, susceptibility_exact, susceptibility_via_field,
                       thermal_expectation)
from errors import DomainError
from hfunctions import StepFunction, w_prime
from lattice import TorusSpec, momentum_grid, momentum_position, negate_momentum

CHAIN = TorusSpec(d=1, side=4)


def test_hamiltonian():
    """
    Two coupled spins with δ = 0: H = −λσ³σ³ has spectrum {−λ, −λ, λ, λ}
    """
    print("=== Testing Exact Diagonalization ===\n")
    pair = TorusSpec(d=1, side=2)
    decomp = decompose(pair, 1.0, 0.0)
    np.testing.assert_allclose(decomp.energies, [-1.0, -1.0, 1.0, 1.0], atol=1e-12)

    H = build_hamiltonian(CHAIN, 0.7, 1.1)
    np.testing.assert_allclose(H, H.T)
    decomp = decompose(CHAIN, 0.7, 1.1)
    np.testing.assert_allclose(decomp.reconstruct(), H, atol=1e-12)
    assert decomp.shifted_energies[0] == 0.0
    print(f"ground state energy {decomp.energies[0]:.6f}")

    with pytest.raises(DomainError):
        build_hamiltonian(TorusSpec(d=2, side=4), 0.5, 1.0)


def test_single_site_closed_forms():
    """
    H = −δσ¹: ⟨σ¹⟩ = tanh(δβ), c(t) = cosh(δ(β − 2t))/cosh(δβ), χ = tanh(δβ)/δ
    """
    spec = TorusSpec.single_site()
    beta, delta = 1.3, 0.8
    decomp = decompose(spec, 0.0, delta)
    assert thermal_expectation(decomp, beta, sigma_x_matrix(1, 0)) == pytest.approx(math.tanh(delta * beta), abs=1e-12)
    for t in (0.0, 0.2, 0.65, 1.1):
        assert schwinger_exact(decomp, beta, 0, 0, t) == pytest.approx(single_site_schwinger(t, beta, delta), abs=1e-10)
    assert susceptibility_exact(decomp, spec, beta) == pytest.approx(single_site_susceptibility(beta, delta), abs=1e-10)
    assert bubble_exact(decomp, spec, beta) == pytest.approx(single_site_bubble(beta, delta), abs=1e-9)
    k0 = momentum_grid(spec)[0]
    # two levels 2δ apart: ĉ(l) = tanh(δβ)·4δ/(4δ² + l²)
    for j in range(4):
        l = 2.0 * math.pi * j / beta
        expected = math.tanh(delta * beta) * 4.0 * delta / (4.0 * delta ** 2 + l ** 2)
        assert chat_exact(decomp, spec, beta, k0, j) == pytest.approx(expected, rel=1e-10)


def test_thermal_expectation_shapes():
    decomp = decompose(CHAIN, 0.5, 1.0)
    ones = np.ones(decomp.dim)
    assert thermal_expectation(decomp, 1.0, ones) == pytest.approx(1.0)
    assert thermal_expectation(decomp, 1.0, np.eye(decomp.dim)) == pytest.approx(1.0)
    with pytest.raises(DomainError):
        thermal_expectation(decomp, 1.0, np.ones(3))
    with pytest.raises(DomainError):
        schwinger_exact(decomp, 1.0, 0, 1, 1.0)
    with pytest.raises(DomainError):
        decomp.sz(4)


def test_schwinger_symmetries():
    """
    c(x, t) = c(x, β − t) on a reflection-symmetric chain; c(0, 0) = 1; c ≥ 0
    """
    beta = 1.5
    decomp = decompose(CHAIN, 0.5, 1.0)
    times = np.linspace(0.05, 1.45, 15)
    for x in range(4):
        forward = schwinger_grid(decomp, beta, 0, x, times)
        backward = schwinger_grid(decomp, beta, 0, x, beta - times)
        np.testing.assert_allclose(forward, backward, atol=1e-12)
        assert np.all(forward > 0)
    assert schwinger_exact(decomp, beta, 0, 0, 0.0) == pytest.approx(1.0)
    np.testing.assert_allclose(schwinger_grid(decomp, beta, 0, 1, times),
                               schwinger_grid(decomp, beta, 0, 3, times), atol=1e-12)


def test_chat_consistency():
    """
    ĉ(0,0) = Σ_x b(x); ĉ(−k,−l) = ĉ(k,l); the grid agrees with pointwise values
    """
    beta = 1.0
    decomp = decompose(CHAIN, 0.5, 1.0)
    grid = chat_exact_grid(decomp, CHAIN, beta, 3)
    assert grid.shape == (4, 7)
    ks = momentum_grid(CHAIN)
    chi = susceptibility_exact(decomp, CHAIN, beta)
    assert chi == pytest.approx(sum(duhamel_exact(decomp, beta, x) for x in range(4)), rel=1e-10)
    assert grid[0, 3] == pytest.approx(chi, rel=1e-10)
    for kp, k in enumerate(ks):
        neg = momentum_position(CHAIN, negate_momentum(CHAIN, k))
        np.testing.assert_allclose(grid[kp], grid[neg, ::-1], rtol=1e-10, atol=1e-12)
        for j in (-2, 0, 1):
            assert grid[kp, 3 + j] == pytest.approx(chat_exact(decomp, CHAIN, beta, k, j), rel=1e-10)
    with pytest.raises(DomainError):
        chat_exact(decomp, CHAIN, beta, ks[0], 0.5)

    table = chat_table_exact(decomp, CHAIN, beta, 3)
    assert (table['se'] == 0.0).all()
    assert len(table) == 4 * 7


def test_bubble_below_susceptibility():
    """0 ≤ c ≤ 1 gives B = Σ_x∫c² ≤ Σ_x∫c = χ"""
    for lam, delta in [(0.2, 1.0), (0.5, 1.0), (1.0, 0.5)]:
        decomp = decompose(CHAIN, lam, delta)
        B = bubble_exact(decomp, CHAIN, 1.0)
        chi = susceptibility_exact(decomp, CHAIN, 1.0)
        print(f"lambda={lam} delta={delta}: B={B:.6f} chi={chi:.6f}")
        assert 0 < B <= chi


def test_susceptibility_via_field():
    """χ is the ν-derivative of the per-site magnetization"""
    beta, lam, delta = 1.0, 0.5, 1.0
    chi = susceptibility_exact(decompose(CHAIN, lam, delta), CHAIN, beta)
    assert susceptibility_via_field(CHAIN, beta, lam, delta) == pytest.approx(chi, rel=1e-6)


def test_richardson_derivative():
    value, err = richardson_derivative(math.sin, 0.3, 1e-2)
    assert value == pytest.approx(math.cos(0.3), abs=1e-9)
    assert err < 1e-4
    one_sided, _ = richardson_derivative(math.exp, 0.0, 1e-2, allow_below=False)
    assert one_sided == pytest.approx(1.0, abs=1e-5)


def test_chi_partials():
    """
    χ grows with the coupling and shrinks with the transverse field
    """
    beta = 1.0
    parts = chi_partials(CHAIN, beta, 0.5, 1.0)
    print(f"chi={parts.chi:.6f} dchi/dlambda={parts.dchi_dlambda:.6f} dchi/ddelta={parts.dchi_ddelta:.6f}")
    assert parts.dchi_dlambda > 0
    assert parts.dchi_ddelta < 0
    h = 1e-2
    crude = (susceptibility_exact(decompose(CHAIN, 0.5 + h, 1.0), CHAIN, beta)
             - susceptibility_exact(decompose(CHAIN, 0.5 - h, 1.0), CHAIN, beta)) / (2 * h)
    assert parts.dchi_dlambda == pytest.approx(crude, rel=1e-3)

    at_zero = chi_partials(CHAIN, beta, 0.0, 1.0)
    assert at_zero.dchi_dlambda > 0

    inverse = inverse_chi_partials(CHAIN, beta, 0.5, 1.0)
    assert inverse.chi == pytest.approx(1.0 / parts.chi)
    assert inverse.dchi_dlambda == pytest.approx(-parts.dchi_dlambda / parts.chi ** 2, rel=1e-5)

    with pytest.raises(DomainError):
        chi_partials(CHAIN, beta, 0.5, 1e-3, step=1e-3)
    with pytest.raises(DomainError):
        chi_partials(CHAIN, beta, -0.1, 1.0)
    with pytest.raises(DomainError):
        chi_partials(CHAIN, beta, 0.5, 1.0, step=0.0)


def test_even_poisson():
    mean = 1.7
    probs = [even_poisson_pmf(k, mean) for k in range(60)]
    assert math.fsum(probs) == pytest.approx(1.0, abs=1e-12)
    assert even_poisson_pmf(3, mean) == 0.0
    assert math.fsum(k * p for k, p in enumerate(probs)) == pytest.approx(even_poisson_mean(mean))
    assert even_poisson_pmf(0, 0.0) == 1.0


def test_free_site_zeta():
    """ζ(r) = Σ_k P(2k)·cosh(r/δ)^{2k} in closed form"""
    beta, delta = 1.0, 1.2
    assert free_site_zeta(0.0, beta, delta) == 1.0
    for r in (0.3, 1.0):
        series = math.fsum(even_poisson_pmf(k, delta * beta) * math.cosh(r / delta) ** k for k in range(0, 80, 2))
        assert free_site_zeta(r, beta, delta) == pytest.approx(series, rel=1e-12)
        assert free_site_zeta(-r, beta, delta) == free_site_zeta(r, beta, delta)


def test_free_site_zratio():
    """
    Z(W_{r,n})/Z(0) for a free site approaches ζ(r) as n grows
    """
    beta, delta, r = 1.0, 1.0, 0.5
    assert free_site_zratio(StepFunction.constant(beta), delta) == pytest.approx(1.0, abs=1e-12)
    target = free_site_zeta(r, beta, delta)
    gaps = []
    for n in (2, 4, 8, 16):
        value = free_site_zratio(w_prime(r, n, beta), delta)
        gaps.append(abs(value - target))
        print(f"n={n}: Z ratio {value:.8f}, zeta {target:.8f}")
    assert gaps[-1] < gaps[0]
    assert gaps[-1] < 1e-4
    with pytest.raises(DomainError):
        free_site_zratio(StepFunction.constant(beta, 1.0), delta)


def test_flip_density_exact():
    """
    μ|D|/|Λ| = βδ⟨σ¹⟩: δβ·tanh(δβ) for a free site, below 2βδ when coupled
    """
    beta, delta = 1.3, 0.8
    free = decompose(TorusSpec.single_site(), 0.0, delta)
    assert flip_density_exact(free, beta) == pytest.approx(even_poisson_mean(delta * beta), rel=1e-12)
    coupled = decompose(CHAIN, 0.5, 1.0)
    sx = sum(thermal_expectation(coupled, 1.0, sigma_x_matrix(4, x)) for x in range(4))
    assert flip_density_exact(coupled, 1.0) == pytest.approx(sx / 4, rel=1e-10)
    assert 0 < flip_density_exact(coupled, 1.0) < 2.0
    with pytest.raises(DomainError):
        flip_density_exact(decompose(CHAIN, 0.5, 1.0, nu=0.1), 1.0)


def test_export_debug_csv(tmp_path):
    decomp = decompose(CHAIN, 0.5, 1.0)
    export_debug_csv(decomp, 1.0, tmp_path, time_grid=4)
    assert (tmp_path / 'eigenvalues.csv').read_text().startswith('m,energy')
    lines = (tmp_path / 'schwinger_exact.csv').read_text().splitlines()
    assert lines[0] == 'x_index,t,mean,se'
    assert len(lines) == 1 + 4 * 4


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, '-v']))
