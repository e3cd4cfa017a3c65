import numpy as np
import pytest
from hypothesis import given, strategies as st

from conftest import random_spins
from kackawasaki import kmc
from kackawasaki.coarse import make_plan
from kackawasaki.lattice import SpinConfig, build_kernel, rate_bounds, rates


def _plan(gamma=0.2, N=10, beta=1.0, profile="gaussian"):
    return make_plan(gamma, N, beta=beta, profile=profile)


@given(st.lists(st.tuples(st.integers(0, 30), st.floats(0.01, 0.99)), min_size=1, max_size=40))
def test_rate_index_sums(updates):
    idx = kmc.RateIndex(np.full(31, 0.5))
    for b, v in updates:
        idx.update([b], [v])
    assert idx.audit() < 1e-9
    assert abs(idx.total_rate - idx.leaves.sum()) < 1e-12 * idx.leaves.sum()


def test_rate_index_sampling_proportional():
    w = np.array([0.1, 0.2, 0.3, 0.4])
    idx = kmc.RateIndex(w)
    u = np.random.default_rng(0).random(100_000) * idx.total_rate
    counts = np.bincount([idx.sample(x) for x in u], minlength=4)
    p = w / w.sum()
    assert np.all(np.abs(counts / u.size - p) < 3 * np.sqrt(p * (1 - p) / u.size))


def test_total_rate_in_bounds(rng):
    plan = _plan(0.1, 30, 1.0)
    k = plan.kernel()
    cfg = SpinConfig.from_spins(random_spins(rng, 61), k)
    sim = kmc.KawasakiSimulator(cfg, k, 1.0)
    lo, hi = rate_bounds(k, 1.0)
    assert 61 * lo - 1e-9 <= sim.total_rate <= 61 * hi + 1e-9
    assert abs(sim.total_rate - rates(cfg, k, 1.0).sum()) < 1e-9


def test_uniform_bond_selection_beta_zero():
    k = build_kernel("gaussian", 0.2, 10)
    cfg = SpinConfig.from_spins(random_spins(np.random.default_rng(1), 21), k)
    sim = kmc.KawasakiSimulator(cfg, k, 0.0, seed=3, event_cap=10**6, log_events=True)
    with pytest.raises(kmc.EventCapExceeded):
        sim.advance(np.inf)
    times, bonds = sim.event_log()
    assert bonds.size == 10**6
    assert np.all(np.diff(times) > 0)
    counts = np.bincount(bonds, minlength=21)
    p = 1 / 21
    sd = np.sqrt(bonds.size * p * (1 - p))
    assert np.all(np.abs(counts - bonds.size * p) < 3 * sd)


def test_all_up_exchanges_are_noops():
    k = build_kernel("gaussian", 0.2, 10)
    cfg = SpinConfig.from_spins(np.ones(21), k)
    plan = _plan()
    traj = kmc.run(plan, cfg, k, np.linspace(0, 0.01, 5), seed=0, log_events=True)
    assert traj.n_events > 0
    assert np.all(traj.spins == 1)
    assert np.allclose(traj.smoothed, 1.0, atol=1e-12)
    assert abs(traj.n_events / traj.t_end_micro - 21 * 0.5) < 5 * np.sqrt(21 * 0.5 / traj.t_end_micro)


def _codes(spins_rows):
    return (((spins_rows > 0).astype(np.int64)) << np.arange(spins_rows.shape[1])).sum(axis=1)


def test_transition_frequencies_match_generator():
    k = build_kernel("gaussian", 0.2, 2)
    L, mu, configs, _ = kmc.sector_generator(2, 1, k, 1.0)
    index = {int(c): r for r, c in enumerate(_codes(configs))}
    cfg = SpinConfig.from_spins(configs[0], k)
    sim = kmc.KawasakiSimulator(cfg, k, 1.0, seed=11, event_cap=10**6, log_events=True)
    with pytest.raises(kmc.EventCapExceeded):
        sim.advance(np.inf)
    _, bonds = sim.event_log()
    s = configs[0].astype(np.int64).copy()
    n = s.size
    counts = np.zeros(L.shape)
    state = index[int(_codes(s[None])[0])]
    for b in bonds:
        j = (b + 1) % n
        s[b], s[j] = s[j], s[b]
        new = index[int(_codes(s[None])[0])]
        counts[state, new] += 1
        state = new
    # d = 0 bonds fire as no-ops; compare the embedded jump chain
    np.fill_diagonal(counts, 0)
    for r in range(L.shape[0]):
        out = -L[r, r]
        visits = counts[r].sum()
        assert visits > 1000
        for c in range(L.shape[0]):
            if c == r:
                continue
            p = L[r, c] / out
            sd = np.sqrt(max(visits * p * (1 - p), 1e-300))
            assert abs(counts[r, c] - visits * p) <= 3 * sd + 1e-9, (r, c)


def test_same_seed_is_bit_identical(rng):
    plan = _plan(0.2, 20, 1.0)
    k = plan.kernel()
    cfg = SpinConfig.from_spins(random_spins(rng, 41), k)
    a = kmc.run(plan, cfg, k, [0.0, 0.001, 0.002], seed=5, log_events=True)
    b = kmc.run(plan, cfg, k, [0.0, 0.001, 0.002], seed=5, log_events=True)
    c = kmc.run(plan, cfg, k, [0.0, 0.001, 0.002], seed=6, log_events=True)
    assert np.array_equal(a.smoothed, b.smoothed) and np.array_equal(a.event_times, b.event_times)
    assert np.array_equal(a.event_bonds, b.event_bonds)
    assert not np.array_equal(a.event_bonds[:50], c.event_bonds[:50])


def test_zero_length_schedule(rng):
    plan = _plan()
    k = plan.kernel()
    cfg = SpinConfig.from_spins(random_spins(rng, 21), k)
    traj = kmc.run(plan, cfg, k, [], seed=0)
    assert traj.smoothed.shape == (1, 21)
    assert np.array_equal(traj.smoothed[0], cfg.smoothed)
    assert np.array_equal(traj.spins[0], cfg.spins)


@given(st.integers(0, 1000), st.sampled_from([0.0, 0.7, 1.5]))
def test_magnetization_constant_across_samples(seed, beta):
    rng = np.random.default_rng(seed)
    plan = _plan(0.2, 12, beta, "triangular")
    k = plan.kernel()
    cfg = SpinConfig.from_spins(random_spins(rng, 25), k)
    traj = kmc.run(plan, cfg, k, np.linspace(0, 0.005, 6), seed=seed)
    assert np.all(traj.total_mag == cfg.total_mag)
    assert np.max(np.abs(traj.smoothed[-1] - SpinConfig.from_spins(traj.final_spins, k).smoothed)) < 1e-10


def test_replica_streams_differ(rng):
    plan = _plan(0.2, 12, 1.0)
    k = plan.kernel()
    cfg = SpinConfig.from_spins(random_spins(rng, 25), k)
    a = kmc.run(plan, cfg, k, [0.0, 0.002], seed=0, replica_id=0)
    b = kmc.run(plan, cfg, k, [0.0, 0.002], seed=0, replica_id=1)
    assert not np.array_equal(a.final_spins, b.final_spins)


def test_stationarity_examples():
    k = build_kernel("gaussian", 0.2, 2)
    stat, db = kmc.stationarity_audit(2, 1, k, 1.0)
    assert stat < 1e-10 and db < 1e-12
    L, mu, _, _ = kmc.sector_generator(2, 1, k, 0.0)
    assert np.allclose(mu, 1 / mu.size, atol=1e-15)
    assert max(kmc.stationarity_audit(2, 1, k, 0.0)) < 1e-12
    assert kmc.stationarity_audit(2, 5, k, 1.0) == (0.0, 0.0)


def test_empty_sector_rejected():
    with pytest.raises(ValueError):
        kmc.sector_configs(5, 0)


def test_simulator_audit_after_run(rng):
    plan = _plan(0.1, 40, 1.0)
    k = plan.kernel()
    sim = kmc.KawasakiSimulator(SpinConfig.from_spins(random_spins(rng, 81), k), k, 1.0, refresh_every=10**9)
    sim.advance(50.0)
    assert sim.audit() < 1e-9
