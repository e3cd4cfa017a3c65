"""Event-driven kinetic Monte Carlo for the Kawasaki exchange chain.

Bond selection uses a complete binary sum-tree over the heat-bath rates.
After a swap on (i, i+1) only bonds within ``radius + 1`` of the swap see a
change in h, so only that window of leaves is rewritten and its ancestors
recomputed from their children (no incremental float drift in the tree).

Randomness comes from a Philox stream keyed by (seed, replica_id); uniforms
are drawn in blocks and consumed by the compiled loop, so a run is a pure
function of its inputs.
"""

from __future__ import annotations

import csv
import itertools
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from numba import njit

from .lattice import KacKernel, SpinConfig, convolve, hamiltonian, logistic, rates as bond_rates

DEFAULT_EVENT_CAP = 10**9
UNIFORM_BLOCK = 1 << 16


class IndexMismatchError(RuntimeError):
    pass


class EventCapExceeded(RuntimeError):
    pass


def make_rng(seed: int, replica_id: int = 0) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), int(replica_id)])))


# ---------------------------------------------------------------- sum tree


@njit(cache=True)
def _tree_fix_range(tree, P, lo, hi):
    # lo..hi are leaf positions (0-based, inclusive, non-wrapping)
    a = (lo + P) >> 1
    b = (hi + P) >> 1
    while a >= 1:
        for k in range(a, b + 1):
            tree[k] = tree[2 * k] + tree[2 * k + 1]
        if a == 1:
            break
        a >>= 1
        b >>= 1


@njit(cache=True)
def _tree_sample(tree, P, x):
    k = 1
    while k < P:
        left = tree[2 * k]
        if x < left:
            k = 2 * k
        else:
            x -= left
            k = 2 * k + 1
    return k - P


@njit(cache=True)
def _tree_build(tree, P):
    for k in range(P - 1, 0, -1):
        tree[k] = tree[2 * k] + tree[2 * k + 1]


class RateIndex:
    """Sum-tree over bond rates with O(log n) sampling."""

    def __init__(self, rates: np.ndarray):
        n = rates.size
        P = 1
        while P < n:
            P <<= 1
        self.n = n
        self.P = P
        self.tree = np.zeros(2 * P)
        self.tree[P : P + n] = rates
        _tree_build(self.tree, P)
        self.generation = 0

    @property
    def total_rate(self) -> float:
        return float(self.tree[1])

    @property
    def leaves(self) -> np.ndarray:
        return self.tree[self.P : self.P + self.n]

    def update(self, bonds, values) -> None:
        bonds = np.asarray(bonds) % self.n
        self.tree[self.P + bonds] = values
        for b in np.unique(bonds):
            _tree_fix_range(self.tree, self.P, int(b), int(b))

    def sample(self, u: float) -> int:
        j = _tree_sample(self.tree, self.P, u * self.tree[1])
        return min(j, self.n - 1)

    def audit(self, rel_tol: float = 1e-9) -> float:
        """Largest relative defect between internal nodes and their children."""
        worst = 0.0
        for k in range(1, self.P):
            s = self.tree[2 * k] + self.tree[2 * k + 1]
            worst = max(worst, abs(self.tree[k] - s) / max(abs(s), 1e-300))
        return worst


# ---------------------------------------------------------------- compiled core


@njit(cache=True)
def _bond_rate(spins, h, n, j, beta, kdiff):
    jn = j + 1
    if jn == n:
        jn = 0
    d = spins[j] - spins[jn]
    if d == 0:
        dH = 0.0
    else:
        dH = d * (h[j] - h[jn]) + d * d * kdiff
    z = beta * dH
    if z >= 0:
        e = math.exp(-z)
        return e / (1.0 + e), d
    return 1.0 / (1.0 + math.exp(z)), d


@njit(cache=True)
def _recompute_field(spins, h, w, R, n):
    for k in range(n):
        acc = 0.0
        for z in range(-R, R + 1):
            acc += w[(z + n) % n] * spins[(k - z) % n]
        h[k] = acc


@njit(cache=True)
def _full_refresh(spins, h, w, R, n, rates, dvals, tree, P, beta, kdiff, G, S1, S2):
    _recompute_field(spins, h, w, R, n)
    for j in range(n):
        c, d = _bond_rate(spins, h, n, j, beta, kdiff)
        rates[j] = c
        dvals[j] = d
        tree[P + j] = c
    _tree_build(tree, P)
    nobs = G.shape[0]
    for p in range(nobs):
        S1[p] = 0.0
        for q in range(nobs):
            S2[p, q] = 0.0
    for j in range(n):
        if dvals[j] != 0:
            cd = rates[j] * dvals[j]
            cdd = cd * dvals[j]
            for p in range(nobs):
                S1[p] += cd * G[p, j]
                for q in range(nobs):
                    S2[p, q] += cdd * G[p, j] * G[q, j]


@njit(cache=True)
def _update_window(spins, h, n, lo, cnt, beta, kdiff, rates, dvals, tree, P, G, S1, S2, rates_fixed):
    nobs = G.shape[0]
    for t in range(cnt):
        j = (lo + t) % n
        if dvals[j] != 0:
            cd = rates[j] * dvals[j]
            cdd = cd * dvals[j]
            for p in range(nobs):
                S1[p] -= cd * G[p, j]
                for q in range(nobs):
                    S2[p, q] -= cdd * G[p, j] * G[q, j]
        if rates_fixed:
            jn = j + 1
            if jn == n:
                jn = 0
            d = spins[j] - spins[jn]
            c = rates[j]
        else:
            c, d = _bond_rate(spins, h, n, j, beta, kdiff)
        rates[j] = c
        dvals[j] = d
        tree[P + j] = c
        if d != 0:
            cd = c * d
            cdd = cd * d
            for p in range(nobs):
                S1[p] += cd * G[p, j]
                for q in range(nobs):
                    S2[p, q] += cdd * G[p, j] * G[q, j]
    if not rates_fixed:
        if cnt >= n:
            _tree_build(tree, P)
        else:
            hi = lo + cnt - 1
            if hi < n:
                _tree_fix_range(tree, P, lo, hi)
            else:
                _tree_fix_range(tree, P, lo, n - 1)
                _tree_fix_range(tree, P, 0, hi - n)


@njit(cache=True)
def _kmc_loop(
    spins, h, w, R, beta, kdiff, rates, dvals, tree, P,
    t, t_stop, sample_times, samp_idx, samples_h, samples_s, sample_obs,
    unif, upos,
    G, S1, S2, obs_val, drift_int, pred, emp,
    log_t, log_b, log_pos, log_on,
    n_events, max_events, refresh_every, since_refresh, rates_fixed,
):
    """Advance until t_stop, uniforms run out, the log fills, or the event cap.

    Returns (t, samp_idx, upos, log_pos, n_events, since_refresh, status)
    with status 0 = reached t_stop, 1 = need uniforms, 2 = log full, 3 = cap.
    """
    n = spins.size
    nobs = G.shape[0]
    nsamp = sample_times.size
    nu = unif.size
    while True:
        if n_events >= max_events:
            return t, samp_idx, upos, log_pos, n_events, since_refresh, 3
        if upos + 2 > nu:
            return t, samp_idx, upos, log_pos, n_events, since_refresh, 1
        if log_on and log_pos >= log_t.size:
            return t, samp_idx, upos, log_pos, n_events, since_refresh, 2
        total = tree[1]
        tau = -math.log(1.0 - unif[upos]) / total
        t_next = t + tau
        # flush samples scheduled before the next event (state is constant there)
        while samp_idx < nsamp and sample_times[samp_idx] <= min(t_next, t_stop):
            dt = sample_times[samp_idx] - t
            for p in range(nobs):
                drift_int[p] += S1[p] * dt
                for q in range(nobs):
                    pred[p, q] += S2[p, q] * dt
            t = sample_times[samp_idx]
            if rates_fixed:
                _recompute_field(spins, h, w, R, n)
            for k in range(n):
                samples_h[samp_idx, k] = h[k]
                samples_s[samp_idx, k] = spins[k]
            for p in range(nobs):
                sample_obs[samp_idx, 0, p] = obs_val[p]
                sample_obs[samp_idx, 1, p] = drift_int[p]
                sample_obs[samp_idx, 2, p] = pred[p, p]
                sample_obs[samp_idx, 3, p] = emp[p, p]
            samp_idx += 1
        if t_next > t_stop:
            dt = t_stop - t
            for p in range(nobs):
                drift_int[p] += S1[p] * dt
                for q in range(nobs):
                    pred[p, q] += S2[p, q] * dt
            # memoryless clock: the unused uniform is discarded deterministically
            upos += 1
            if rates_fixed:
                _recompute_field(spins, h, w, R, n)
            return t_stop, samp_idx, upos, log_pos, n_events, since_refresh, 0
        dt = t_next - t
        for p in range(nobs):
            drift_int[p] += S1[p] * dt
            for q in range(nobs):
                pred[p, q] += S2[p, q] * dt
        t = t_next
        i = _tree_sample(tree, P, unif[upos + 1] * total)
        if i >= n:
            i = n - 1
        upos += 2
        n_events += 1
        if log_on:
            log_t[log_pos] = t
            log_b[log_pos] = i
            log_pos += 1
        j1 = i + 1
        if j1 == n:
            j1 = 0
        d = spins[i] - spins[j1]
        if d == 0:
            continue
        for p in range(nobs):
            jump = d * G[p, i]
            obs_val[p] += jump
            for q in range(nobs):
                emp[p, q] += jump * d * G[q, i]
        spins[i] = spins[j1]
        spins[j1] = spins[i] + d
        if rates_fixed:
            # h is not needed by constant rates; rebuilt at samples and stops
            pass
        elif 2 * R + 2 >= n:
            for k in range(n):
                h[k] += d * (w[(k - i - 1) % n] - w[(k - i) % n])
        else:
            for off in range(-R, R + 2):
                k = (i + off) % n
                h[k] += d * (w[(off - 1) % n] - w[off % n])
        since_refresh += 1
        if since_refresh >= refresh_every:
            _full_refresh(spins, h, w, R, n, rates, dvals, tree, P, beta, kdiff, G, S1, S2)
            since_refresh = 0
        elif rates_fixed:
            _update_window(spins, h, n, (i - 1) % n, 3, beta, kdiff, rates, dvals, tree, P, G, S1, S2, True)
        else:
            cnt = 2 * R + 3
            if cnt > n:
                cnt = n
            _update_window(spins, h, n, (i - R - 1) % n, cnt, beta, kdiff, rates, dvals, tree, P, G, S1, S2, False)


# ---------------------------------------------------------------- python API


@dataclass
class Trajectory:
    """Sampled output of one replica.

    ``obs`` has shape (n_samples, 4, n_obs) with rows: value of the
    registered pairing, integrated drift, predictable bracket, empirical
    bracket (all in macroscopic units).  Cross brackets at t_end live in
    ``pred_matrix`` / ``emp_matrix``.
    """

    seed: int
    replica_id: int
    t_end_micro: float
    sample_times_micro: np.ndarray
    sample_times_macro: np.ndarray
    smoothed: np.ndarray
    spins: np.ndarray
    total_mag: np.ndarray
    n_events: int
    obs: np.ndarray
    pred_matrix: np.ndarray
    emp_matrix: np.ndarray
    event_times: np.ndarray | None = None
    event_bonds: np.ndarray | None = None
    final_spins: np.ndarray | None = None


class KawasakiSimulator:
    """Owns one replica's state, rate tree and observable accumulators.

    ``obs_weights`` rows are per-bond jump amplitudes G_p(i): a swap on bond
    i with d_i = s_i - s_{i+1} moves the observable by d_i G_p(i).
    ``obs_init`` gives their initial values.  Drift and bracket integrals are
    accumulated in microscopic time, which equals the macroscopic-time
    integral of the sped-up generator, so they need no rescaling.
    """

    def __init__(
        self,
        cfg: SpinConfig,
        kernel: KacKernel,
        beta: float,
        seed: int = 0,
        replica_id: int = 0,
        obs_weights: np.ndarray | None = None,
        obs_init: np.ndarray | None = None,
        refresh_every: int = 100_000,
        event_cap: int = DEFAULT_EVENT_CAP,
        log_events: bool = False,
    ):
        if beta < 0:
            raise ValueError("beta must be nonnegative")
        if cfg.n_sites != kernel.n_sites:
            raise ValueError("configuration and kernel sizes differ")
        self.kernel = kernel
        self.beta = float(beta)
        self.seed = int(seed)
        self.replica_id = int(replica_id)
        self.rng = make_rng(seed, replica_id)
        self.spins = cfg.spins.astype(np.int64).copy()
        self.h = convolve(kernel, self.spins)
        self.n = kernel.n_sites
        self.R = kernel.radius
        self.kdiff = kernel.kappa1 - kernel.kappa0
        self.rates = np.zeros(self.n)
        self.dvals = np.zeros(self.n, dtype=np.int64)
        P = 1
        while P < self.n:
            P <<= 1
        self.P = P
        self.tree = np.zeros(2 * P)
        if obs_weights is None:
            obs_weights = np.zeros((0, self.n))
        self.G = np.ascontiguousarray(np.atleast_2d(obs_weights), dtype=float)
        nobs = self.G.shape[0]
        self.S1 = np.zeros(nobs)
        self.S2 = np.zeros((nobs, nobs))
        self.obs_val = np.zeros(nobs) if obs_init is None else np.asarray(obs_init, dtype=float).copy()
        self.drift_int = np.zeros(nobs)
        self.pred = np.zeros((nobs, nobs))
        self.emp = np.zeros((nobs, nobs))
        self.refresh_every = int(refresh_every)
        self.since_refresh = 0
        self.event_cap = int(event_cap)
        self.n_events = 0
        self.t = 0.0
        self.log_events = log_events
        self._log_t: list[np.ndarray] = []
        self._log_b: list[np.ndarray] = []
        self.rates_fixed = self.beta == 0.0
        _full_refresh(self.spins, self.h, kernel.weights, self.R, self.n, self.rates, self.dvals,
                      self.tree, self.P, self.beta, self.kdiff, self.G, self.S1, self.S2)
        self._unif = np.zeros(0)
        self._upos = 0
        self.generation = 0

    @property
    def total_rate(self) -> float:
        return float(self.tree[1])

    def config(self) -> SpinConfig:
        return SpinConfig.from_spins(self.spins.astype(np.int8), self.kernel)

    def _ensure_uniforms(self) -> None:
        if self._upos + 2 > self._unif.size:
            rest = self._unif[self._upos :]
            self._unif = np.concatenate([rest, self.rng.random(UNIFORM_BLOCK)])
            self._upos = 0

    def advance(self, t_stop: float, sample_times=()) -> tuple[np.ndarray, np.ndarray]:
        """Run to microscopic time t_stop, sampling h and observables at sample_times."""
        st = np.asarray(sample_times, dtype=float)
        nobs = self.G.shape[0]
        samples_h = np.zeros((st.size, self.n))
        samples_s = np.zeros((st.size, self.n), dtype=np.int8)
        sample_obs = np.zeros((st.size, 4, nobs))
        samp_idx = 0
        log_cap = 1 << 16
        while True:
            self._ensure_uniforms()
            log_t = np.zeros(log_cap if self.log_events else 0)
            log_b = np.zeros(log_cap if self.log_events else 0, dtype=np.int64)
            (self.t, samp_idx, self._upos, log_pos, self.n_events, self.since_refresh, status) = _kmc_loop(
                self.spins, self.h, self.kernel.weights, self.R, self.beta, self.kdiff,
                self.rates, self.dvals, self.tree, self.P,
                self.t, float(t_stop), st, samp_idx, samples_h, samples_s, sample_obs,
                self._unif, self._upos,
                self.G, self.S1, self.S2, self.obs_val, self.drift_int, self.pred, self.emp,
                log_t, log_b, 0, self.log_events,
                self.n_events, self.event_cap, self.refresh_every, self.since_refresh, self.rates_fixed,
            )
            if self.log_events and log_pos:
                self._log_t.append(log_t[:log_pos].copy())
                self._log_b.append(log_b[:log_pos].copy())
            self.generation += 1
            if self.rates_fixed and status in (0, 3):
                self.h[:] = convolve(self.kernel, self.spins)
            if status == 0:
                self.last_spin_samples = samples_s
                return samples_h, sample_obs
            if status == 3:
                raise EventCapExceeded(f"event cap {self.event_cap} reached at t={self.t}")

    def step(self) -> tuple[float, int]:
        """One event: returns (holding time, bond)."""
        self._ensure_uniforms()
        u1, u2 = self._unif[self._upos], self._unif[self._upos + 1]
        total = self.tree[1]
        tau = -math.log(1.0 - u1) / total
        # run the compiled loop for exactly one event
        cap = self.event_cap
        self.event_cap = self.n_events + 1
        was_logging = self.log_events
        self.log_events = True
        try:
            self.advance(math.inf)
        except EventCapExceeded:
            pass
        finally:
            self.event_cap = cap
            self.log_events = was_logging
        bond = int(self._log_b.pop()[-1])
        self._log_t.pop()
        return tau, bond

    def event_log(self) -> tuple[np.ndarray, np.ndarray]:
        if not self._log_t:
            return np.zeros(0), np.zeros(0, dtype=np.int64)
        return np.concatenate(self._log_t), np.concatenate(self._log_b)

    def audit(self) -> float:
        """Max |tree leaf - freshly recomputed rate| after a from-scratch sweep."""
        cfg = self.config()
        fresh = bond_rates(cfg, self.kernel, self.beta)
        leaf_err = float(np.max(np.abs(self.tree[self.P : self.P + self.n] - fresh)))
        node_err = 0.0
        for k in range(1, self.P):
            s = self.tree[2 * k] + self.tree[2 * k + 1]
            node_err = max(node_err, abs(self.tree[k] - s) / max(abs(s), 1e-300))
        h_err = float(np.max(np.abs(self.h - cfg.smoothed)))
        return max(leaf_err, node_err, h_err)


def run(
    plan,
    cfg0: SpinConfig,
    kernel: KacKernel,
    schedule,
    seed: int,
    replica_id: int = 0,
    obs_weights: np.ndarray | None = None,
    obs_init: np.ndarray | None = None,
    t_end: float | None = None,
    log_events: bool = False,
    event_cap: int = DEFAULT_EVENT_CAP,
) -> Trajectory:
    """Simulate one replica and sample at macroscopic times ``schedule``.

    Macroscopic time t corresponds to microscopic time t / plan.alpha.
    """
    schedule = np.asarray(schedule, dtype=float)
    if schedule.size and (np.any(np.diff(schedule) < 0) or schedule[0] < 0):
        raise ValueError("schedule must be sorted and nonnegative")
    t_end_macro = float(schedule[-1]) if t_end is None and schedule.size else float(t_end or 0.0)
    if schedule.size and schedule[-1] > t_end_macro:
        raise ValueError("schedule exceeds horizon")
    sim = KawasakiSimulator(cfg0, kernel, plan.beta, seed, replica_id, obs_weights, obs_init,
                            event_cap=event_cap, log_events=log_events)
    scale = 1.0 / plan.alpha
    micro = schedule * scale
    t_stop = t_end_macro * scale
    if schedule.size == 0:
        samples = cfg0.smoothed[None, :].copy()
        spin_samples = cfg0.spins[None, :].copy()
        obs = np.zeros((1, 4, sim.G.shape[0]))
        obs[0, 0] = sim.obs_val
        micro = np.zeros(1)
        schedule = np.zeros(1)
        if t_stop > 0:
            sim.advance(t_stop)
    else:
        samples, obs = sim.advance(t_stop, micro)
        spin_samples = sim.last_spin_samples
    obs = obs.copy()
    ev_t, ev_b = sim.event_log() if log_events else (None, None)
    total_mag = spin_samples.sum(axis=1, dtype=np.int64)
    # integrity: magnetization is conserved exactly by every swap
    if int(sim.spins.sum()) != cfg0.total_mag:
        raise AssertionError("magnetization not conserved")
    return Trajectory(
        seed=seed,
        replica_id=replica_id,
        t_end_micro=t_stop,
        sample_times_micro=micro,
        sample_times_macro=schedule,
        smoothed=samples,
        spins=spin_samples,
        total_mag=total_mag,
        n_events=sim.n_events,
        obs=obs,
        pred_matrix=sim.pred.copy(),
        emp_matrix=sim.emp.copy(),
        event_times=ev_t,
        event_bonds=ev_b,
        final_spins=sim.spins.astype(np.int8),
    )


# ---------------------------------------------------------------- exact sector generator


def sector_configs(n_sites: int, M: int) -> np.ndarray:
    """All spin vectors of length n_sites with sum M, in lexicographic rank order."""
    if (n_sites + M) % 2 or abs(M) > n_sites:
        raise ValueError(f"empty sector: n={n_sites}, M={M}")
    n_up = (n_sites + M) // 2
    out = np.full((math.comb(n_sites, n_up), n_sites), -1, dtype=np.int8)
    for r, ups in enumerate(itertools.combinations(range(n_sites), n_up)):
        out[r, list(ups)] = 1
    return out


def sector_generator(N_small: int, M: int, kernel: KacKernel, beta: float, max_size: int = 10_000):
    """Dense generator L on the canonical sector plus Gibbs weights and the config list."""
    n = 2 * N_small + 1
    if kernel.n_sites != n:
        raise ValueError("kernel lattice does not match N_small")
    configs = sector_configs(n, M)
    size = len(configs)
    if size > max_size:
        raise ValueError(f"sector has {size} configurations (> {max_size})")
    index = {c.tobytes(): r for r, c in enumerate(configs)}
    energies = np.array([hamiltonian(SpinConfig.from_spins(c, kernel), kernel) for c in configs])
    L = np.zeros((size, size))
    for r, c in enumerate(configs):
        cfg = SpinConfig.from_spins(c, kernel)
        cr = bond_rates(cfg, kernel, beta)
        for i in range(n):
            j = (i + 1) % n
            if c[i] == c[j]:
                continue
            s = c.copy()
            s[i], s[j] = c[j], c[i]
            L[r, index[s.tobytes()]] += cr[i]
    L[np.diag_indices(size)] = -L.sum(axis=1)
    logw = -beta * energies
    mu = np.exp(logw - logw.max())
    mu /= mu.sum()
    return L, mu, configs, energies


def stationarity_audit(N_small: int, M: int, kernel: KacKernel, beta: float) -> tuple[float, float]:
    """(||mu^T L||_inf, max detailed-balance defect) on the sector Sigma_{N,M}."""
    L, mu, _, _ = sector_generator(N_small, M, kernel, beta)
    stat = float(np.max(np.abs(mu @ L))) if L.size else 0.0
    flux = mu[:, None] * L
    np.fill_diagonal(flux, 0.0)
    db = float(np.max(np.abs(flux - flux.T))) if L.size else 0.0
    return stat, db


def write_series_csv(path, traj: Trajectory, eps: float, delta: float) -> None:
    """Field series as rows (t_macro, site_index, X_gamma)."""
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["t_macro", "site_index", "X_gamma"])
        for t, row in zip(traj.sample_times_macro, traj.smoothed):
            for i, v in enumerate(row / delta):
                wr.writerow([repr(float(t)), i, repr(float(v))])


def replica_filename(kind: str, seed: int, replica_id: int) -> str:
    return f"{kind}_seed{seed}_rep{replica_id:04d}.csv"
