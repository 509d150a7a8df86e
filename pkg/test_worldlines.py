import math
import sys

import numpy as np
import pytest

from errors import ContractViolation, DomainError
from lattice import TorusSpec, momentum_grid
from worldlines import (WorldlineConfig, arc_overlap, constant_intervals, energy_estimator,
                        flip_line, fourier_transform_sigma, frequency_index, global_flip,
                        insert_pair, interaction_action, interval_overlap, load_config, move_flip,
                        overlap_integral, remove_pair, save_config, shift_arc, spin_at, spin_grid,
                        time_fourier, total_flip_count)


def two_site_config():
    """β = 1; site 0 down on [0.2, 0.6), site 1 starts down and is up on [0.5, 0.9)"""
    return WorldlineConfig(beta=1.0, xi=[0, 1], flips=[[0.2, 0.6], [0.5, 0.9]])


def test_spin_at():
    """
    Right-continuous trajectory (−1)^(ξ + #flips ≤ t)
    """
    print("=== Testing Worldline Trajectories ===\n")
    cfg = two_site_config()
    assert spin_at(cfg, 0, 0.0) == 1
    assert spin_at(cfg, 0, 0.2) == -1
    assert spin_at(cfg, 0, 0.59) == -1
    assert spin_at(cfg, 0, 0.6) == 1
    assert spin_at(cfg, 1, 0.1) == -1
    assert spin_at(cfg, 1, 0.7) == 1
    assert spin_at(cfg, 1, 0.95) == -1
    with pytest.raises(DomainError):
        spin_at(cfg, 0, 1.0)
    with pytest.raises(DomainError):
        spin_at(cfg, 2, 0.0)


def test_constant_intervals():
    cfg = two_site_config()
    starts, ends, spins = constant_intervals(cfg, 0)
    np.testing.assert_allclose(starts, [0.0, 0.2, 0.6])
    np.testing.assert_allclose(ends, [0.2, 0.6, 1.0])
    np.testing.assert_allclose(spins, [1, -1, 1])
    assert float(np.dot(ends - starts, spins)) == pytest.approx(0.2)


def test_overlap_integral():
    """
    Overlap equals the measure where spins agree minus where they disagree
    """
    cfg = two_site_config()
    # product: [0,.2) −, [.2,.5) +, [.5,.6) −, [.6,.9) +, [.9,1) −
    expected = -0.2 + 0.3 - 0.1 + 0.3 - 0.1
    assert overlap_integral(cfg, 0, 1) == pytest.approx(expected)
    assert overlap_integral(cfg, 1, 0) == pytest.approx(expected)
    assert overlap_integral(cfg, 0, 0) == pytest.approx(1.0)
    assert interval_overlap(cfg, 0, 1, 0.3, 0.55) == pytest.approx(0.2 - 0.05)
    assert arc_overlap(cfg, 0, 1, 0.8, 0.1) == pytest.approx(0.1 - 0.1 - 0.1)

    up = WorldlineConfig.all_up(2, 2.0)
    assert overlap_integral(up, 0, 1) == pytest.approx(2.0)
    flip_line(up, 1)
    assert overlap_integral(up, 0, 1) == pytest.approx(-2.0)


def test_overlap_matches_grid_quadrature():
    """Exact overlap against a fine time grid on random configurations"""
    rng = np.random.default_rng(7)
    for _ in range(5):
        flips = [np.sort(rng.random(2 * rng.integers(0, 4))) for _ in range(2)]
        cfg = WorldlineConfig(beta=1.0, xi=rng.integers(0, 2, size=2), flips=flips)
        grid = spin_grid(cfg, 20000).astype(float)
        approx = float(np.mean(grid[0] * grid[1]))
        assert overlap_integral(cfg, 0, 1) == pytest.approx(approx, abs=2e-3)


def test_action_and_energy():
    """Action sums over unordered edges; energy is −(action + |D|)/β"""
    spec = TorusSpec(d=1, side=4)
    cfg = WorldlineConfig.all_up(4, 2.0)
    assert interaction_action(cfg, spec, 0.5) == pytest.approx(0.5 * 4 * 2.0)
    assert energy_estimator(cfg, spec, 0.5) == pytest.approx(-2.0)
    insert_pair(cfg, 0, 0.5, 1.5)
    assert total_flip_count(cfg) == 2
    # site 0 disagrees with both neighbours on a length-1 window
    assert interaction_action(cfg, spec, 1.0) == pytest.approx(8.0 - 4.0)
    assert energy_estimator(cfg, spec, 1.0) == pytest.approx(-(4.0 + 2) / 2.0)
    with pytest.raises(DomainError):
        interaction_action(cfg, TorusSpec(d=1, side=6), 1.0)


def test_time_fourier():
    """
    ∫σe^{ilt}dt: zero mode is the time average, constant spins kill j ≠ 0
    """
    cfg = two_site_config()
    out = time_fourier(cfg, 0, [0, 1, -1, 2])
    assert out[0].real == pytest.approx(0.2)
    np.testing.assert_allclose(out[2], np.conj(out[1]), atol=1e-14)
    # piece [.2,.6) with spin −1 relative to a constant background
    l = 2.0 * math.pi
    direct = -2.0 * (np.exp(1j * l * 0.6) - np.exp(1j * l * 0.2)) / (1j * l)
    assert out[1] == pytest.approx(direct)

    up = WorldlineConfig.all_up(1, 1.5)
    np.testing.assert_allclose(time_fourier(up, 0, [1, 2, 3]), 0.0, atol=1e-14)


def test_fourier_transform_sigma():
    spec = TorusSpec(d=1, side=4)
    cfg = WorldlineConfig.all_up(4, 1.0)
    k0, k1 = momentum_grid(spec)[0], momentum_grid(spec)[1]
    assert fourier_transform_sigma(cfg, spec, k0, 0) == pytest.approx(4.0)
    assert abs(fourier_transform_sigma(cfg, spec, k1, 0)) < 1e-12
    assert abs(fourier_transform_sigma(cfg, spec, k0, 1.0)) < 1e-12
    with pytest.raises(DomainError):
        fourier_transform_sigma(cfg, spec, k0, 0.5)


def test_frequency_index():
    assert frequency_index(2.0, 2.0 * math.pi * 3 / 2.0) == 3
    assert frequency_index(1.0, -2.0 * math.pi) == -1
    with pytest.raises(DomainError):
        frequency_index(1.0, 1.0)


def test_spin_grid():
    cfg = two_site_config()
    grid = spin_grid(cfg, 10)
    assert grid.dtype == np.int8
    assert grid.shape == (2, 10)
    assert list(grid[0]) == [1, 1, -1, -1, -1, -1, 1, 1, 1, 1]


def test_pair_moves_keep_parity():
    """Insert and remove toggle a window; flip lists stay even and sorted"""
    cfg = WorldlineConfig.all_up(1, 1.0)
    insert_pair(cfg, 0, 0.7, 0.3)
    cfg.validate()
    np.testing.assert_allclose(cfg.flips[0], [0.3, 0.7])
    assert spin_at(cfg, 0, 0.5) == -1
    insert_pair(cfg, 0, 0.1, 0.9)
    np.testing.assert_allclose(cfg.flips[0], [0.1, 0.3, 0.7, 0.9])
    remove_pair(cfg, 0, 1, 2)
    np.testing.assert_allclose(cfg.flips[0], [0.1, 0.9])
    cfg.validate()


def test_shift_toggles_xi_when_wrapping():
    """
    Moving the first flip past the last one sweeps an arc through 0: σ(x,0) changes
    """
    cfg = WorldlineConfig(beta=1.0, xi=[0], flips=[[0.2, 0.6]])
    assert shift_arc(cfg.flips[0], 0, 0.9) == (0.9, 0.2)
    assert shift_arc(cfg.flips[0], 0, 0.1) == (0.1, 0.2)
    mids = (np.arange(100) + 0.5) / 100
    before = [spin_at(cfg, 0, t) for t in mids]
    move_flip(cfg, 0, 0, 0.9)
    cfg.validate()
    np.testing.assert_allclose(cfg.flips[0], [0.6, 0.9])
    assert cfg.xi[0] == 1
    after = [spin_at(cfg, 0, t) for t in mids]
    # the trajectory only changed on the swept arc [0.9, 1) ∪ [0, 0.2)
    changed = [m for m in range(100) if before[m] != after[m]]
    assert set(changed) == set(range(0, 20)) | set(range(90, 100))

    cfg = WorldlineConfig(beta=1.0, xi=[0], flips=[[0.2, 0.6]])
    move_flip(cfg, 0, 1, 0.05)
    np.testing.assert_allclose(cfg.flips[0], [0.05, 0.2])
    assert cfg.xi[0] == 1


def test_global_flip_is_a_copy():
    cfg = two_site_config()
    flipped = global_flip(cfg)
    assert list(flipped.xi) == [1, 0]
    assert list(cfg.xi) == [0, 1]
    np.testing.assert_array_equal(spin_grid(flipped, 16), -spin_grid(cfg, 16))


def test_validate_rejects_bad_configs():
    with pytest.raises(DomainError):
        WorldlineConfig(beta=1.0, xi=[0], flips=[[0.5]]).validate()
    with pytest.raises(DomainError):
        WorldlineConfig(beta=1.0, xi=[0], flips=[[0.5, 1.2]]).validate()
    with pytest.raises(DomainError):
        WorldlineConfig(beta=1.0, xi=[0], flips=[[0.5, 0.5]]).validate()


def test_save_and_load(tmp_path):
    """JSON document {beta, sites:[{xi, flips}]}"""
    cfg = two_site_config()
    path = tmp_path / 'cfg.json'
    save_config(cfg, path)
    loaded = load_config(path)
    assert loaded.beta == 1.0
    assert list(loaded.xi) == [0, 1]
    for a, b in zip(loaded.flips, cfg.flips):
        np.testing.assert_array_equal(a, b)

    path.write_text('{"beta": 1.0, "sites": [{"xi": 0}]}')
    with pytest.raises(ContractViolation):
        load_config(path)
    path.write_text('{"beta": 1.0, "sites": [{"xi": 0, "flips": [0.3]}]}')
    with pytest.raises(DomainError):
        load_config(path)


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, '-v']))
