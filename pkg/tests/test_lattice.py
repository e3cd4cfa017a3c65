import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from conftest import random_spins
from kackawasaki.lattice import (
    PROFILES, SpinConfig, StaleCacheError, apply_exchange, bond_local, build_kernel, continuity_check,
    convolve, currents, exchange_energies, exchange_energy, hamiltonian, load_snapshot, logistic, rate_bounds,
    rates, save_snapshot, swapped,
)

profiles = st.sampled_from(sorted(PROFILES))
gammas = st.floats(0.05, 0.24)


def test_gaussian_normalized():
    k = build_kernel("gaussian", 0.1, 100)
    assert abs(k.weights.sum() - 1.0) < 1e-14


@given(profiles, gammas, st.integers(3, 60))
def test_kernel_symmetric_nonnegative(profile, gamma, N):
    k = build_kernel(profile, gamma, N)
    z = np.arange(k.n_sites)
    assert np.array_equal(k.kappa(z), k.kappa(-z))
    assert np.all(k.weights >= 0)
    assert abs(k.weights.sum() - 1.0) < 1e-14


def test_gaussian_second_moment():
    k = build_kernel("gaussian", 0.05, 400)
    assert abs(k.second_moment_discrete - 1.0) < 0.02


def test_second_moment_converges():
    errs = [abs(build_kernel("triangular", g, 400).second_moment_discrete - 1 / 6) for g in (0.2, 0.1, 0.05)]
    assert errs[0] > errs[1] > errs[2]


def test_bad_kernel_inputs():
    with pytest.raises(ValueError):
        build_kernel("boxcar", 0.1, 50)
    with pytest.raises(ValueError):
        build_kernel("gaussian", 0.3, 50)


def test_hamiltonian_all_up():
    k = build_kernel("gaussian", 0.2, 10)
    cfg = SpinConfig.from_spins(np.ones(21), k)
    assert abs(hamiltonian(cfg, k) + 21 / 2) < 1e-12


def _brute_h(s, k):
    n = s.size
    return -0.5 * sum(k.kappa(i - j) * s[i] * s[j] for i in range(n) for j in range(n))


def test_hamiltonian_single_flip():
    k = build_kernel("gaussian", 0.2, 4)
    s = np.ones(9)
    s[3] = -1
    cfg = SpinConfig.from_spins(s, k)
    off = sum(k.kappa(3 - j) for j in range(9) if j != 3)
    assert abs(hamiltonian(cfg, k) - (-9 / 2 + 2 * off)) < 1e-12
    assert abs(hamiltonian(cfg, k) - _brute_h(s, k)) < 1e-12


def test_hamiltonian_alternating():
    k = build_kernel("raised_cosine", 0.2, 5)
    s = np.array([(-1) ** i for i in range(11)])
    cfg = SpinConfig.from_spins(s, k)
    assert abs(hamiltonian(cfg, k) - _brute_h(s, k)) < 1e-12


@given(st.integers(0, 2**13 - 1), profiles)
def test_exchange_energy_matches_brute_force(code, profile):
    k = build_kernel(profile, 0.2, 6)
    s = np.where((code >> np.arange(13)) & 1, 1, -1)
    cfg = SpinConfig.from_spins(s, k)
    H0 = hamiltonian(cfg, k)
    for i in range(13):
        assert abs(exchange_energy(cfg, k, i) - (hamiltonian(swapped(cfg, k, i), k) - H0)) < 1e-12


def test_exchange_energy_equal_spins_zero():
    k = build_kernel("gaussian", 0.2, 6)
    cfg = SpinConfig.from_spins(np.ones(13), k)
    assert np.all(exchange_energies(cfg, k) == 0.0)


def test_exchange_energy_explicit_formula():
    k = build_kernel("gaussian", 0.2, 6)
    s = np.ones(13)
    s[5] = -1
    cfg = SpinConfig.from_spins(s, k)
    i = 4  # bond (+,-)
    d = s[i] - s[i + 1]
    h = cfg.smoothed
    expect = d * (h[i] - h[i + 1]) + d * d * (k.kappa1 - k.kappa0)
    assert abs(exchange_energy(cfg, k, i) - expect) < 1e-12


def test_rates_equal_spins_and_beta_zero(rng):
    k = build_kernel("gaussian", 0.1, 30)
    cfg = SpinConfig.from_spins(random_spins(rng, 61), k)
    b = bond_local(SpinConfig.from_spins(np.ones(61), k), k, 1.0, 7)
    assert b.d == 0 and b.delta_H == 0 and b.rate == 0.5 and b.current == 0
    assert np.all(rates(cfg, k, 0.0) == 0.5)


@given(st.integers(0, 10_000), st.floats(0.0, 3.0))
def test_rate_ratio_detailed_balance(seed, beta):
    rng = np.random.default_rng(seed)
    k = build_kernel("triangular", 0.2, 8)
    cfg = SpinConfig.from_spins(random_spins(rng, 17), k)
    i = int(rng.integers(17))
    back = swapped(cfg, k, i)
    dH = exchange_energy(cfg, k, i)
    r1 = bond_local(cfg, k, beta, i).rate
    r2 = bond_local(back, k, beta, i).rate
    assert abs(r1 / r2 - math.exp(-beta * dH)) < 1e-12 * max(1.0, math.exp(-beta * dH))
    assert abs(logistic(beta * dH) - 1 / (1 + math.exp(beta * dH))) < 1e-15


@given(st.integers(0, 10_000), profiles)
def test_incremental_field_matches_reconvolution(seed, profile):
    rng = np.random.default_rng(seed)
    k = build_kernel(profile, 0.15, 8)
    cfg = SpinConfig.from_spins(random_spins(rng, 17), k, refresh_every=10**9)
    M = cfg.total_mag
    for _ in range(200):
        before = cfg.spins.copy()
        i = int(rng.integers(17))
        cfg = apply_exchange(cfg, k, i)
        assert cfg.total_mag == M == int(cfg.spins.sum())
        if before[i] == before[(i + 1) % 17]:
            assert np.array_equal(before, cfg.spins)
    assert np.max(np.abs(cfg.smoothed - convolve(k, cfg.spins))) < 1e-12
    assert np.all(np.abs(cfg.smoothed) <= 1 + 1e-12)
    cfg.check_cache()


def test_stale_cache_detected():
    k = build_kernel("gaussian", 0.2, 8)
    cfg = SpinConfig.from_spins(np.ones(17), k)
    cfg.set_spin(3, -1)
    with pytest.raises(StaleCacheError):
        cfg.check_cache()
    cfg.refresh()
    cfg.check_cache()


@given(st.integers(0, 10_000), st.integers(2, 10), st.sampled_from([0.0, 0.5, 2.0]))
def test_continuity_equation(seed, N, beta):
    rng = np.random.default_rng(seed)
    k = build_kernel("gaussian", 0.2, N)
    cfg = SpinConfig.from_spins(random_spins(rng, 2 * N + 1), k)
    assert continuity_check(cfg, k, beta) < 1e-12
    up = SpinConfig.from_spins(np.ones(2 * N + 1), k)
    assert continuity_check(up, k, beta) == 0.0
    assert np.all(currents(up, k, beta) == 0.0)


@given(st.integers(0, 10_000), st.floats(0.0, 4.0))
def test_rates_within_bounds(seed, beta):
    rng = np.random.default_rng(seed)
    k = build_kernel("gaussian", 0.1, 20)
    cfg = SpinConfig.from_spins(random_spins(rng, 41), k)
    lo, hi = rate_bounds(k, beta)
    r = rates(cfg, k, beta)
    assert np.all(r >= lo - 1e-15) and np.all(r <= hi + 1e-15)


@given(st.integers(0, 10_000))
def test_snapshot_round_trip(tmp_path_factory, seed):
    rng = np.random.default_rng(seed)
    k = build_kernel("gaussian", 0.1, 20)
    cfg = SpinConfig.from_spins(random_spins(rng, 41), k)
    p = tmp_path_factory.mktemp("snap") / "s.bin"
    save_snapshot(cfg, p)
    back = load_snapshot(p, k)
    assert np.array_equal(back.spins, cfg.spins)
    assert back.total_mag == cfg.total_mag
    assert np.array_equal(back.smoothed, cfg.smoothed)
