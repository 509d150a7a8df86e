import math
import sys

import numpy as np
import pytest

from ed_oracle import (bubble_exact, chat_table_exact, decompose, schwinger_exact,
                       single_site_schwinger, single_site_susceptibility)
from errors import ContractViolation, DomainError
from lattice import TorusSpec
from observables import (MeasurementPlan, bubble_estimate, chat_table, mean_flip_density,
                         merge_all, schwinger_estimate, susceptibility_estimate)
from sampler import (SamplerParams, init_free, load_checkpoint, make_rng, new_chain, run_chain,
                     run_replica, save_checkpoint, sweep)
from verify import check_bubble_agreement, check_free_flip_law
from worldlines import total_flip_count


def test_params_validation():
    """Preconditions are checked before any chain runs"""
    with pytest.raises(DomainError, match="sweeps must be positive"):
        SamplerParams(lam=0.5, delta=1.0, beta=1.0, sweeps=0)
    with pytest.raises(DomainError):
        SamplerParams(lam=-0.1, delta=1.0, beta=1.0)
    with pytest.raises(DomainError):
        SamplerParams(lam=0.5, delta=0.0, beta=1.0)
    with pytest.raises(DomainError):
        SamplerParams(lam=0.5, delta=1.0, beta=1.0, move_mix=(0.1, 0.5, 0.3, 0.1))
    with pytest.raises(DomainError):
        SamplerParams(lam=0.5, delta=1.0, beta=1.0, move_mix=(0.2, 0.4, 0.4, 0.1))
    params = SamplerParams(lam=0.5, delta=1.0, beta=1.0, move_mix=[0.25, 0.25, 0.25, 0.25])
    assert params.move_mix == (0.25, 0.25, 0.25, 0.25)


def test_init_free_is_even_and_seeded():
    spec = TorusSpec(d=1, side=4)
    a = init_free(spec, 2.0, 1.5, make_rng(11))
    b = init_free(spec, 2.0, 1.5, make_rng(11))
    a.validate()
    assert all(f.size % 2 == 0 for f in a.flips)
    np.testing.assert_array_equal(a.xi, b.xi)
    for fa, fb in zip(a.flips, b.flips):
        np.testing.assert_array_equal(fa, fb)


def test_sweeps_keep_configurations_valid():
    """
    Every move keeps the flip lists even, sorted and inside [0, β)
    """
    spec = TorusSpec(d=2, side=4)
    params = SamplerParams(lam=0.7, delta=1.3, beta=1.5, seed=5, sweeps=1)
    state = new_chain(spec, params)
    for _ in range(300):
        sweep(state, params)
        state.config.validate()
    rates = state.acceptance_rates()
    print(f"acceptance after 300 sweeps: {rates}")
    assert state.step == 300
    assert sum(state.attempts.values()) == 300 * spec.n_sites
    assert all(0.0 <= r <= 1.0 for r in rates.values())


def test_run_chain_counts_samples():
    spec = TorusSpec(d=1, side=4)
    params = SamplerParams(lam=0.5, delta=1.0, beta=1.0, seed=2, sweeps=100, burn_in=20, thinning=4)
    seen = []
    info = run_chain(new_chain(spec, params), params, lambda cfg: seen.append(total_flip_count(cfg)))
    assert info['samples'] == 25 == len(seen)
    assert info['sweeps'] == 120
    assert info['burn_in'] == 20
    assert info['tau_int'] is None


def test_burn_in_from_pilot():
    spec = TorusSpec(d=1, side=4)
    params = SamplerParams(lam=0.5, delta=1.0, beta=1.0, seed=4, sweeps=10, pilot_sweeps=400)
    info = run_chain(new_chain(spec, params), params, lambda cfg: None)
    assert info['tau_int'] >= 0.5
    assert info['burn_in'] >= 0
    assert info['sweeps'] == 400 + info['burn_in'] + 10


def test_checkpoint_resumes_bit_exact(tmp_path):
    """
    Continue-after-reload gives the same chain as running straight through
    """
    spec = TorusSpec(d=1, side=4)
    params = SamplerParams(lam=0.5, delta=1.0, beta=1.0, seed=9, sweeps=1)
    straight = new_chain(spec, params)
    for _ in range(40):
        sweep(straight, params)
    path = tmp_path / 'chain.json'
    save_checkpoint(straight, path)
    for _ in range(40):
        sweep(straight, params)

    resumed = load_checkpoint(path)
    assert resumed.step == 40
    for _ in range(40):
        sweep(resumed, params)
    np.testing.assert_array_equal(resumed.config.xi, straight.config.xi)
    for a, b in zip(resumed.config.flips, straight.config.flips):
        np.testing.assert_array_equal(a, b)
    assert resumed.accepts == straight.accepts
    assert resumed.rng.random() == straight.rng.random()

    path.write_text('{"beta": 1.0, "sites": []}')
    with pytest.raises(ContractViolation):
        load_checkpoint(path)


def test_replicas_are_deterministic():
    spec = TorusSpec(d=1, side=4)
    plan = MeasurementPlan(spec=spec, beta=1.0, lam=0.5, delta=1.0, time_grid=8, j_max=2)
    params = SamplerParams(lam=0.5, delta=1.0, beta=1.0, seed=21, sweeps=300, burn_in=50)
    acc1, _ = run_replica(spec, params, plan, batch_size=20)
    acc2, _ = run_replica(spec, params, plan, batch_size=20)
    np.testing.assert_array_equal(acc1.mean('chat'), acc2.mean('chat'))
    np.testing.assert_array_equal(acc1.se('schwinger'), acc2.se('schwinger'))


def test_free_flip_count_mean():
    """
    At λ = 0 each site is an even-conditioned Poisson process: E|D_x| = δβ·tanh(δβ)
    """
    spec = TorusSpec(d=1, side=4)
    beta, delta = 1.0, 1.5
    plan = MeasurementPlan(spec=spec, beta=beta, lam=0.0, delta=delta, time_grid=4, j_max=0)
    params = SamplerParams(lam=0.0, delta=delta, beta=beta, seed=3, sweeps=6000, burn_in=200)
    acc, _ = run_replica(spec, params, plan, batch_size=50)
    mean, se = mean_flip_density(acc, plan)
    expected = delta * beta * math.tanh(delta * beta)
    print(f"flip density {mean:.4f} ± {se:.4f}, expected {expected:.4f}")
    assert abs(mean - expected) < 4.0 * se
    assert mean <= 2.0 * beta * delta + 4.0 * se


def test_free_flip_law_from_chains():
    """
    At λ = 0 the per-site flip counts sampled by the chain follow
    P(2k) = (δβ)^{2k}/((2k)!cosh(δβ)) on each of three seeds
    """
    spec = TorusSpec(d=1, side=4)
    beta, delta = 1.0, 1.5
    for seed in (31, 32, 33):
        params = SamplerParams(lam=0.0, delta=delta, beta=beta, seed=seed, sweeps=10_000,
                               burn_in=200, thinning=50)
        counts = []
        run_chain(new_chain(spec, params), params,
                  lambda cfg: counts.extend(f.size for f in cfg.flips))
        report = check_free_flip_law(counts, beta, delta)
        print(f"seed {seed}: {len(counts)} counts, p = {report.details['p_value']:.3f}, "
              f"mean {report.details['mean']:.3f} (expected {report.details['expected_mean']:.3f})")
        assert report.passed
        assert report.details['bins'] >= 3
        mean, se = np.mean(counts), np.std(counts, ddof=1) / math.sqrt(len(counts))
        assert mean <= 2.0 * beta * delta + 4.0 * se


def test_single_site_oracle():
    """
    Isolated site: c(t) = cosh(δ(β − 2t))/cosh(δβ) and χ = tanh(δβ)/δ
    """
    spec = TorusSpec.single_site()
    beta, delta = 1.0, 1.0
    plan = MeasurementPlan(spec=spec, beta=beta, lam=0.0, delta=delta, time_grid=8, j_max=1)
    params = SamplerParams(lam=0.0, delta=delta, beta=beta, seed=17, sweeps=40_000, burn_in=500)
    acc, _ = run_replica(spec, params, plan, batch_size=200)
    for t in (0.25, 0.5):
        mean, se = schwinger_estimate(acc, plan, 0, t)
        exact = single_site_schwinger(t, beta, delta)
        print(f"c({t}) = {mean:.4f} ± {se:.4f}, exact {exact:.4f}")
        assert abs(mean - exact) < 4.0 * se + 1e-3
    chi, se = susceptibility_estimate(acc, plan)
    assert abs(chi - single_site_susceptibility(beta, delta)) < 4.0 * se + 1e-3


def test_correspondence_with_exact_diagonalization():
    """
    Four seeded chains on the side-4 chain at β = 1, λ = 0.5, δ = 1 against
    exact diagonalization: μ(σ(0,0)σ(1,0)), ĉ(k, l) on the whole grid and
    the replica-product bubble within 4·SE plus its tail bound
    """
    print("=== Testing Worldline / Hamiltonian Correspondence ===\n")
    spec = TorusSpec(d=1, side=4)
    beta, lam, delta = 1.0, 0.5, 1.0
    j_max = 2
    plan = MeasurementPlan(spec=spec, beta=beta, lam=lam, delta=delta, time_grid=8, j_max=j_max)
    accs = []
    for seed in (101, 102, 103, 104):
        params = SamplerParams(lam=lam, delta=delta, beta=beta, seed=seed, sweeps=20_000, burn_in=500)
        acc, info = run_replica(spec, params, plan, batch_size=100)
        print(f"seed {seed}: acceptance {info['acceptance']}")
        accs.append(acc)
    acc = merge_all(accs)
    decomp = decompose(spec, lam, delta)

    mean, se = schwinger_estimate(acc, plan, 1, 0.0)
    exact = schwinger_exact(decomp, beta, 0, 1, 0.0)
    print(f"MC {mean:.5f} ± {se:.5f}, exact {exact:.5f}")
    assert abs(mean - exact) < max(4.0 * se, 0.01)

    sampled = chat_table(acc, plan)
    reference = chat_table_exact(decomp, spec, beta, j_max)
    assert len(sampled) == len(reference) == 4 * (2 * j_max + 1)
    gap = (sampled['mean'] - reference['mean']).abs()
    allowed = np.maximum(4.0 * sampled['se'], 0.01)
    worst = (gap - allowed).idxmax()
    print(f"worst ĉ point j={sampled['j'][worst]}: {sampled['mean'][worst]:.5f} "
          f"vs {reference['mean'][worst]:.5f}")
    assert (gap <= allowed).all()
    assert (sampled['j'] != 0).sum() == 4 * 2 * j_max

    B_mc, B_se, tail = bubble_estimate(merge_all(accs[0::2]), merge_all(accs[1::2]), plan)
    B_ed = bubble_exact(decomp, spec, beta)
    print(f"bubble {B_mc:.5f} ± {B_se:.5f} (tail ≤ {tail:.2e}), exact {B_ed:.5f}")
    assert tail > 0
    assert abs(B_mc - B_ed) <= 4.0 * B_se + tail
    assert check_bubble_agreement((B_mc, B_se, tail), B_ed).passed


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, '-v']))
