"""Microscopic Ising-Kac model on the periodic chain Z/(2N+1)Z.

Sites are labelled 0..2N and wrap modulo ``n = 2N + 1``.  Kernel weights are
stored as a length-``n`` array indexed by the offset ``z mod n``.
"""

from __future__ import annotations

import math
import struct
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

SNAPSHOT_MAGIC = b"KKS1"
TRUNCATION = 1e-12
DEFAULT_REFRESH_EVERY = 100_000


class StaleCacheError(RuntimeError):
    """Raised when the smoothed field no longer matches the spins."""


# Base profiles K(u): (callable, closed-form second moment, sup norm, L1 norm of K').
def _gaussian(u):
    return np.exp(-0.5 * u * u) / math.sqrt(2.0 * math.pi)


def _raised_cosine(u):
    return np.where(np.abs(u) <= 1.0, 0.5 * (1.0 + np.cos(math.pi * u)), 0.0)


def _triangular(u):
    return np.clip(1.0 - np.abs(u), 0.0, None)


PROFILES = {
    "gaussian": (_gaussian, 1.0, 1.0 / math.sqrt(2.0 * math.pi), 2.0 / math.sqrt(2.0 * math.pi), math.inf),
    "raised_cosine": (_raised_cosine, 1.0 / 3.0 - 2.0 / math.pi**2, 1.0, 2.0, 1.0),
    "triangular": (_triangular, 1.0 / 6.0, 1.0, 2.0, 1.0),
}


@dataclass(frozen=True)
class KacKernel:
    """Normalized Kac kernel kappa_gamma(z) = gamma * K(gamma z) on the chain."""

    profile: str
    gamma: float
    N: int
    weights: np.ndarray
    radius: int
    second_moment_discrete: float
    second_moment_cont: float
    sup_norm: float
    deriv_l1: float

    @property
    def n_sites(self) -> int:
        return 2 * self.N + 1

    def kappa(self, z) -> np.ndarray | float:
        return self.weights[np.mod(z, self.n_sites)]

    @property
    def kappa0(self) -> float:
        return float(self.weights[0])

    @property
    def kappa1(self) -> float:
        return float(self.weights[1 % self.n_sites])

    @property
    def total_variation(self) -> float:
        """sum_z |kappa(z+1) - kappa(z)|; bounds |h(i+1) - h(i)|."""
        return float(np.abs(np.roll(self.weights, -1) - self.weights).sum())

    @property
    def offsets(self) -> np.ndarray:
        return np.arange(-self.radius, self.radius + 1)

    def fourier(self, k, eps: float | None = None) -> np.ndarray:
        """theta_gamma(k) = sum_z kappa(z) exp(-2 pi i k eps z), real by symmetry."""
        eps = 1.0 / self.n_sites if eps is None else eps
        z = np.arange(self.n_sites)
        z = np.where(z > self.N, z - self.n_sites, z)
        k = np.atleast_1d(np.asarray(k, dtype=float))
        return (self.weights[None, :] * np.cos(2 * np.pi * eps * np.outer(k, z))).sum(axis=1)


def build_kernel(profile: str, gamma: float, N: int) -> KacKernel:
    """Discretize, truncate and renormalize the Kac kernel on 2N+1 sites.

    The base profile is cut where it drops below ``1e-12`` of its maximum;
    offsets beyond the lattice wrap periodically (with a warning).
    """
    if profile not in PROFILES:
        raise ValueError(f"unsupported kernel profile {profile!r}; choose from {sorted(PROFILES)}")
    if not 0.0 < gamma < 0.25:
        raise ValueError(f"gamma must lie in (0, 1/4), got {gamma}")
    if N < 2:
        raise ValueError(f"N must be >= 2, got {N}")
    fn, m2, sup, dl1, support = PROFILES[profile]
    n = 2 * N + 1
    if math.isfinite(support):
        radius = int(math.floor(support / gamma))
    else:
        # K(u)/K(0) = exp(-u^2/2) >= TRUNCATION
        radius = int(math.floor(math.sqrt(-2.0 * math.log(TRUNCATION)) / gamma))
    z = np.arange(-radius, radius + 1)
    raw = gamma * fn(gamma * z.astype(float))
    keep = raw >= TRUNCATION * raw.max()
    z, raw = z[keep], raw[keep]
    radius = int(np.abs(z).max())
    raw = raw / raw.sum()
    m2_discrete = float(gamma**2 * np.sum(z.astype(float) ** 2 * raw))
    if 2 * radius + 1 > n:
        warnings.warn(
            f"kernel support {2 * radius + 1} exceeds lattice size {n}; wrapping periodically",
            stacklevel=2,
        )
    weights = np.zeros(n)
    np.add.at(weights, np.mod(z, n), raw)
    weights /= weights.sum()
    # exact symmetry after float roundoff
    weights = 0.5 * (weights + np.roll(weights[::-1], 1))
    weights /= weights.sum()
    return KacKernel(
        profile=profile,
        gamma=float(gamma),
        N=int(N),
        weights=weights,
        radius=min(radius, N),
        second_moment_discrete=m2_discrete,
        second_moment_cont=m2,
        sup_norm=sup,
        deriv_l1=dl1,
    )


def convolve(kernel: KacKernel, values: np.ndarray) -> np.ndarray:
    """Periodic convolution sum_j kappa(i - j) values[j]."""
    values = np.asarray(values, dtype=float)
    if values.shape[-1] != kernel.n_sites:
        raise ValueError("field length does not match kernel lattice")
    out = np.fft.irfft(np.fft.rfft(kernel.weights) * np.fft.rfft(values, axis=-1), n=kernel.n_sites, axis=-1)
    return out


@dataclass
class SpinConfig:
    """Spins in {-1, +1} with a cached Kac-smoothed field."""

    spins: np.ndarray
    smoothed: np.ndarray
    total_mag: int
    generation: int = 0
    cache_generation: int = 0
    updates_since_refresh: int = 0
    refresh_every: int = DEFAULT_REFRESH_EVERY
    kernel: KacKernel | None = field(default=None, repr=False)

    @classmethod
    def from_spins(cls, spins, kernel: KacKernel, refresh_every: int = DEFAULT_REFRESH_EVERY) -> "SpinConfig":
        s = np.asarray(spins, dtype=np.int8).copy()
        if s.shape != (kernel.n_sites,):
            raise ValueError(f"expected {kernel.n_sites} spins, got shape {s.shape}")
        if not np.all(np.abs(s) == 1):
            raise ValueError("spins must be +1 or -1")
        return cls(
            spins=s,
            smoothed=convolve(kernel, s),
            total_mag=int(s.sum(dtype=np.int64)),
            refresh_every=refresh_every,
            kernel=kernel,
        )

    @property
    def n_sites(self) -> int:
        return self.spins.size

    def copy(self) -> "SpinConfig":
        return SpinConfig(
            spins=self.spins.copy(),
            smoothed=self.smoothed.copy(),
            total_mag=self.total_mag,
            generation=self.generation,
            cache_generation=self.cache_generation,
            updates_since_refresh=self.updates_since_refresh,
            refresh_every=self.refresh_every,
            kernel=self.kernel,
        )

    def set_spin(self, i: int, value: int) -> None:
        """Raw write that invalidates the cache; call :meth:`refresh` afterwards."""
        self.spins[i % self.n_sites] = value
        self.total_mag = int(self.spins.sum(dtype=np.int64))
        self.generation += 1

    def refresh(self, kernel: KacKernel | None = None) -> None:
        kernel = kernel or self.kernel
        self.smoothed = convolve(kernel, self.spins)
        self.cache_generation = self.generation
        self.updates_since_refresh = 0

    def check_cache(self) -> None:
        if self.cache_generation != self.generation:
            raise StaleCacheError(
                f"smoothed field is stale (cache generation {self.cache_generation}, spins {self.generation})"
            )


@dataclass(frozen=True)
class BondLocal:
    d: int
    delta_H: float
    rate: float
    current: float


def logistic(z):
    """F(z) = 1 / (1 + e^z), evaluated without overflow."""
    z = np.asarray(z, dtype=float)
    ez = np.exp(-np.abs(z))
    out = np.where(z >= 0, ez / (1.0 + ez), 1.0 / (1.0 + ez))
    return out if out.ndim else float(out)


def _check_sizes(cfg: SpinConfig, kernel: KacKernel) -> None:
    if cfg.n_sites != kernel.n_sites:
        raise ValueError(f"configuration has {cfg.n_sites} sites, kernel expects {kernel.n_sites}")


def hamiltonian(cfg: SpinConfig, kernel: KacKernel) -> float:
    """Brute-force H = -1/2 sum_{i,j} kappa(i-j) s_i s_j (oracle use only)."""
    _check_sizes(cfg, kernel)
    s = cfg.spins.astype(float)
    n = s.size
    idx = np.arange(n)
    K = kernel.weights[np.mod(idx[:, None] - idx[None, :], n)]
    return float(-0.5 * s @ K @ s)


def exchange_energy(cfg: SpinConfig, kernel: KacKernel, i: int) -> float:
    """H(s^{i,i+1}) - H(s) from the cached smoothed field, in O(1).

    The swap energy is d (h_i - h_{i+1}) + d^2 (kappa(1) - kappa(0)); the
    kappa(0) piece removes the self-interaction carried inside h.
    """
    cfg.check_cache()
    n = cfg.n_sites
    i %= n
    j = (i + 1) % n
    d = int(cfg.spins[i]) - int(cfg.spins[j])
    if d == 0:
        return 0.0
    return d * (cfg.smoothed[i] - cfg.smoothed[j]) + d * d * (kernel.kappa1 - kernel.kappa0)


def exchange_energies(cfg: SpinConfig, kernel: KacKernel) -> np.ndarray:
    """Vectorized exchange_energy over all bonds."""
    cfg.check_cache()
    s = cfg.spins.astype(float)
    d = s - np.roll(s, -1)
    return d * (cfg.smoothed - np.roll(cfg.smoothed, -1)) + d * d * (kernel.kappa1 - kernel.kappa0)


def bond_local(cfg: SpinConfig, kernel: KacKernel, beta: float, i: int) -> BondLocal:
    if beta < 0:
        raise ValueError("beta must be nonnegative")
    n = cfg.n_sites
    i %= n
    d = int(cfg.spins[i]) - int(cfg.spins[(i + 1) % n])
    dH = exchange_energy(cfg, kernel, i)
    rate = logistic(beta * dH)
    return BondLocal(d=d, delta_H=dH, rate=rate, current=d * rate)


def rates(cfg: SpinConfig, kernel: KacKernel, beta: float) -> np.ndarray:
    return logistic(beta * exchange_energies(cfg, kernel))


def currents(cfg: SpinConfig, kernel: KacKernel, beta: float) -> np.ndarray:
    s = cfg.spins.astype(float)
    return (s - np.roll(s, -1)) * rates(cfg, kernel, beta)


def apply_exchange(cfg: SpinConfig, kernel: KacKernel, i: int) -> SpinConfig:
    """Swap spins on bond (i, i+1) in place, updating h only inside the kernel support."""
    n = cfg.n_sites
    i %= n
    j = (i + 1) % n
    a, b = int(cfg.spins[i]), int(cfg.spins[j])
    if a == b:
        return cfg
    cfg.check_cache()
    d = a - b
    cfg.spins[i], cfg.spins[j] = b, a
    R = kernel.radius
    k = np.arange(i - R, i + R + 2) % n
    if k.size > n:
        k = np.arange(n)
    cfg.smoothed[k] += d * (kernel.weights[(k - i - 1) % n] - kernel.weights[(k - i) % n])
    cfg.generation += 1
    cfg.cache_generation = cfg.generation
    cfg.updates_since_refresh += 1
    if cfg.updates_since_refresh >= cfg.refresh_every:
        cfg.refresh(kernel)
    return cfg


def swapped(cfg: SpinConfig, kernel: KacKernel, i: int) -> SpinConfig:
    return apply_exchange(cfg.copy(), kernel, i)


def continuity_check(cfg: SpinConfig, kernel: KacKernel, beta: float) -> float:
    """max_i |(L s_i) - (j_{i-1} - j_i)| with L s_i summed directly over bonds."""
    n = cfg.n_sites
    c = rates(cfg, kernel, beta)
    s = cfg.spins.astype(float)
    direct = np.zeros(n)
    for b in range(n):
        nb = (b + 1) % n
        # swapping bond b changes only sites b and b+1
        direct[b] += c[b] * (s[nb] - s[b])
        direct[nb] += c[b] * (s[b] - s[nb])
    j = (s - np.roll(s, -1)) * c
    return float(np.max(np.abs(direct - (np.roll(j, 1) - j))))


def rate_bounds(kernel: KacKernel, beta: float) -> tuple[float, float]:
    """Uniform ellipticity window [F(beta B), F(-beta B)] with B >= max |Delta H|."""
    B = 2.0 * kernel.total_variation + 4.0 * abs(kernel.kappa1 - kernel.kappa0)
    return logistic(beta * B), logistic(-beta * B)


def save_snapshot(cfg: SpinConfig, path) -> None:
    with open(Path(path), "wb") as fh:
        fh.write(SNAPSHOT_MAGIC)
        fh.write(struct.pack("<Q", cfg.n_sites))
        fh.write(cfg.spins.astype(np.int8).tobytes())


def load_snapshot(path, kernel: KacKernel) -> SpinConfig:
    raw = Path(path).read_bytes()
    if raw[:4] != SNAPSHOT_MAGIC:
        raise ValueError("not a KKS1 snapshot")
    (n,) = struct.unpack("<Q", raw[4:12])
    spins = np.frombuffer(raw[12 : 12 + n], dtype=np.int8)
    if spins.size != n:
        raise ValueError("truncated snapshot")
    return SpinConfig.from_spins(spins, kernel)
