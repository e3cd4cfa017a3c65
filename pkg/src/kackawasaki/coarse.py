"""Scaling plan, coarse-grained field, block averages and replacement residuals."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .lattice import KacKernel, SpinConfig, build_kernel

MODES = ("ratio_locked", "user_exponents")
CONVENTIONS = ("unit", "inverse_n")


@dataclass(frozen=True)
class ScalingPlan:
    """Micro/macro bridge for one value of gamma.

    ``eps`` is the lattice spacing (1/(2N+1) on the unit torus, or 1/N in
    the ``inverse_n`` convention).  ``alpha`` converts micro to macro time,
    ``delta`` rescales amplitudes.  Two coefficient sets are kept:

    * ``targets``: the nominal limit coefficients (nu, A, chi, sigma*^2) with
      A = (1+beta) lambda/2 and chi = lambda beta/6,
    * ``effective``: the coefficients obtained by linearizing the mean
      current of the heat-bath dynamics around local equilibrium at this
      gamma (used when comparing micro and macro ensembles).
    """

    gamma: float
    N: int
    eps: float
    alpha: float
    delta: float
    beta: float
    lam: float
    sigma_star_sq: float
    kappa1: float
    kappa0: float
    m2_discrete: float
    m2_cont: float
    profile: str
    mode: str
    convention: str
    ratio: float
    ell: int
    L: int
    targets: dict = field(default_factory=dict)
    effective: dict = field(default_factory=dict)
    nu_gamma: float = 0.0
    nu_gamma_alt: float = 0.0
    limit_gaps: dict = field(default_factory=dict)
    assumption_ratios: dict = field(default_factory=dict)

    @property
    def n_sites(self) -> int:
        return 2 * self.N + 1

    @property
    def lambda_gamma(self) -> float:
        return self.eps**2 / self.alpha

    @property
    def sigma_star_sq_gamma(self) -> float:
        return self.eps**3 / (self.alpha * self.delta**2)

    def kernel(self) -> KacKernel:
        return build_kernel(self.profile, self.gamma, self.N)

    def sites(self) -> np.ndarray:
        """Torus coordinates of the lattice sites."""
        return np.arange(self.n_sites) * self.eps

    def summary(self) -> str:
        t = self.targets
        lines = [
            f"gamma={self.gamma} N={self.N} eps={self.eps:.6g} eps/gamma={self.ratio:.6g}",
            f"alpha={self.alpha:.6g} delta={self.delta:.6g} beta={self.beta}",
            f"nu_gamma={self.nu_gamma:.6g} (alt normalization {self.nu_gamma_alt:.6g}) nu={t['nu']:.6g}",
            f"A={t['A']:.6g} chi={t['chi']:.6g} sigma*^2={t['sigma_star_sq']:.6g}",
            "effective: " + " ".join(f"{k}={v:.6g}" for k, v in self.effective.items()),
            "gaps: " + " ".join(f"{k}={v:.3g}" for k, v in self.limit_gaps.items()),
            "ratios: " + " ".join(f"{k}={v:.3g}" for k, v in self.assumption_ratios.items()),
        ]
        return "\n".join(lines)


def default_blocks(gamma: float) -> tuple[int, int]:
    """Block scales ell = floor(gamma^-1/2), L = floor(gamma^-3/4)."""
    return max(1, int(math.floor(gamma**-0.5))), max(2, int(math.floor(gamma**-0.75)))


def n_for_ratio(gamma: float, r: float, convention: str = "unit") -> int:
    """Smallest N whose spacing is at most r*gamma."""
    if convention == "unit":
        return max(2, int(math.ceil((1.0 / (r * gamma) - 1.0) / 2.0)))
    return max(2, int(math.ceil(1.0 / (r * gamma))))


def make_plan(
    gamma: float,
    N: int | None = None,
    lambda_target: float = 1.0,
    sigma_star_sq: float = 1.0,
    beta: float = 1.0,
    mode: str = "ratio_locked",
    *,
    r: float | None = None,
    exponent: float = 1.5,
    profile: str = "gaussian",
    convention: str = "unit",
    blocks: tuple[int, int] | None = None,
) -> ScalingPlan:
    """Build a scaling plan.

    ratio_locked: eps/gamma is held at ``r`` (N derived from r when not
    given, else r is read off N).  user_exponents: N = ceil(gamma^-exponent)
    with exponent > 1, so eps/gamma -> 0 and nu_gamma -> 0.
    alpha = eps^2/lambda_target and delta = sqrt(lambda_target*eps/sigma*^2).
    """
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}")
    if convention not in CONVENTIONS:
        raise ValueError(f"convention must be one of {CONVENTIONS}")
    if lambda_target <= 0 or sigma_star_sq <= 0:
        raise ValueError("lambda_target and sigma_star_sq must be positive")
    if beta < 0:
        raise ValueError("beta must be nonnegative")
    if N is None:
        if mode == "ratio_locked":
            if r is None:
                raise ValueError("ratio_locked needs N or r")
            N = n_for_ratio(gamma, r, convention)
        else:
            if exponent <= 1:
                raise ValueError("user_exponents needs exponent > 1 so that eps/gamma -> 0")
            N = int(math.ceil(gamma**-exponent))
    N = int(N)
    kernel = build_kernel(profile, gamma, N)
    eps = 1.0 / (2 * N + 1) if convention == "unit" else 1.0 / N
    ratio = eps / gamma
    alpha = eps**2 / lambda_target
    delta = math.sqrt(lambda_target * eps / sigma_star_sq)
    lam = lambda_target
    k1, k0 = kernel.kappa1, kernel.kappa0
    m2d, m2c = kernel.second_moment_discrete, kernel.second_moment_cont

    nu_gamma = (0.5 - beta * k1) * (m2d / 2.0) * eps**4 / (alpha * gamma**2)
    if not nu_gamma > 0:
        raise ValueError(f"nu_gamma = {nu_gamma} is not positive (need beta*kappa(1) < 1/2)")
    # limit as literally stated, (lambda/4) m2, without the (eps/gamma)^2 factor
    nu_gamma_alt = lam * m2c / 4.0
    if mode == "ratio_locked":
        r_lim = r if r is not None else ratio
        nu_lim = lam * m2c * r_lim**2 / 4.0
    else:
        nu_lim = 0.0
    targets = {
        "nu": nu_lim,
        "A": (1.0 + beta) * lam / 2.0,
        "chi": lam * beta / 6.0,
        "sigma_star_sq": sigma_star_sq,
    }
    # linearized mean current: j ~ -(1/2) grad m + (beta/2)(1-m^2) grad h,
    # h ~ m + (m2/(2 gamma^2)) Lap m on the lattice
    effective = {
        "nu": beta * lam * m2d * ratio**2 / 4.0,
        "A": lam * (beta - 1.0) / 2.0,
        "chi": lam * beta * delta**2 / 6.0,
        "sigma_star_sq": sigma_star_sq,
    }
    gaps = {
        "nu": abs(nu_gamma - nu_lim),
        "lambda": abs(eps**2 / alpha - lam),
        "sigma_star_sq": abs(eps**3 / (alpha * delta**2) - sigma_star_sq),
    }
    ell, L = blocks if blocks is not None else default_blocks(gamma)
    ratios = {
        "eps/gamma": ratio,
        "gamma*eps^3/(alpha*delta^2)": gamma * eps**3 / (alpha * delta**2),
        "gamma*ell": gamma * ell,
        "ell/L": ell / L,
        "gamma^2*L^3": gamma**2 * L**3,
        "L/N": L / N,
    }
    return ScalingPlan(
        gamma=gamma, N=N, eps=eps, alpha=alpha, delta=delta, beta=beta, lam=lam,
        sigma_star_sq=sigma_star_sq, kappa1=k1, kappa0=k0, m2_discrete=m2d, m2_cont=m2c,
        profile=profile, mode=mode, convention=convention, ratio=ratio, ell=ell, L=L,
        targets=targets, effective=effective, nu_gamma=nu_gamma, nu_gamma_alt=nu_gamma_alt,
        limit_gaps=gaps, assumption_ratios=ratios,
    )


# ---------------------------------------------------------------- field


@dataclass
class FieldSample:
    t_macro: float
    values: np.ndarray
    mass: float


def coarse_field(cfg: SpinConfig, plan: ScalingPlan, t_macro: float = 0.0, check: bool = True) -> FieldSample:
    cfg.check_cache()
    values = cfg.smoothed / plan.delta
    mass = plan.eps * float(np.sum(values))
    if check:
        expected = plan.eps / plan.delta * cfg.total_mag
        if abs(mass - expected) > 1e-12 * max(1.0, abs(plan.eps / plan.delta) * cfg.n_sites):
            raise AssertionError(f"mass {mass} differs from (eps/delta) M = {expected}")
    return FieldSample(t_macro, values, mass)


def field_from_smoothed(h: np.ndarray, plan: ScalingPlan, t_macro: float = 0.0) -> FieldSample:
    values = np.asarray(h) / plan.delta
    return FieldSample(t_macro, values, plan.eps * float(values.sum()))


def gradient_bound(kernel: KacKernel, plan: ScalingPlan) -> float:
    """Exact lattice bound sup|grad X| <= TV(kappa)/(delta eps).

    TV(kappa) ~ gamma * ||K'||_L1, which gives the C gamma/(delta eps) form.
    """
    return kernel.total_variation / (plan.delta * plan.eps)


def gradient_sup(values: np.ndarray, eps: float) -> float:
    return float(np.max(np.abs(np.roll(values, -1) - values)) / eps)


# ---------------------------------------------------------------- blocks


def block_average(cfg_or_spins, x: int, ell: int) -> float:
    spins = getattr(cfg_or_spins, "spins", cfg_or_spins)
    n = len(spins)
    if 2 * ell + 1 > n:
        raise ValueError(f"window 2*{ell}+1 exceeds lattice size {n}")
    idx = (x + np.arange(-ell, ell + 1)) % n
    return float(np.mean(spins[idx]))


def block_averages(spins: np.ndarray, ell: int) -> np.ndarray:
    """m_x^ell for every site x (periodic centered windows)."""
    spins = np.asarray(spins, dtype=np.int64)
    n = spins.shape[-1]
    if 2 * ell + 1 > n:
        raise ValueError(f"window 2*{ell}+1 exceeds lattice size {n}")
    c = np.concatenate([spins[..., n - ell :], spins, spins[..., : ell + 1]], axis=-1)
    cs = np.cumsum(c, axis=-1)
    cs = np.concatenate([np.zeros(cs.shape[:-1] + (1,), dtype=np.int64), cs], axis=-1)
    w = 2 * ell + 1
    return (cs[..., w : w + n] - cs[..., :n]) / w


def d0sq_field(spins: np.ndarray) -> np.ndarray:
    """tau_x Psi for Psi = (eta_0 - eta_1)^2 at every site."""
    s = np.asarray(spins, dtype=np.int64)
    return (s - np.roll(s, -1, axis=-1)) ** 2


def kac_of_blocks(m_L: np.ndarray, kernel: KacKernel) -> np.ndarray:
    """hbar(x) = sum_z kappa(x-z) m_z^L, per sample row."""
    W = np.fft.rfft(kernel.weights)
    return np.fft.irfft(np.fft.rfft(m_L, axis=-1) * W, n=m_L.shape[-1], axis=-1)


@dataclass
class ResidualEstimate:
    name: str
    estimate: float
    stderr: float
    n_samples: int


def _time_average(values: np.ndarray, times: np.ndarray) -> float:
    """Trapezoid time average of a sampled series (plain mean for one sample)."""
    if values.size == 1 or times[-1] == times[0]:
        return float(np.mean(values))
    return float(np.trapezoid(values, times) / (times[-1] - times[0]))


def replacement_series(spins: np.ndarray, times: np.ndarray, plan: ScalingPlan, J, ell: int, L: int,
                       phi_table, kernel: KacKernel | None = None) -> dict:
    """Time-averaged weighted residuals for one replica.

    ``spins``: (n_samples, n) spin snapshots.  ``phi_table(m)`` evaluates the
    local-equilibrium average of d0^2 at block magnetization m (vectorized).
    Returns signed time averages of
      one_block: eps sum_x J(x)(tau_x Psi - Phi(m_x^ell)),
      two_block: eps sum_x J(x)(m_x^ell - m_x^L),
      kac_reg:   eps sum_x |J(x)| sum_z kappa(x-z)(m_z^L - hbar(x))^2.
    """
    n = spins.shape[-1]
    if L >= n / 4:
        raise ValueError(f"L={L} violates scale separation (L < n/4 = {n / 4})")
    if not ell <= L:
        raise ValueError("need ell <= L")
    x = np.arange(n) / n
    Jx = np.asarray(J(x), dtype=float) * np.ones(n)
    eps = plan.eps
    m_ell = block_averages(spins, ell)
    m_L = block_averages(spins, L)
    psi = d0sq_field(spins)
    one = eps * np.sum(Jx * (psi - phi_table(m_ell)), axis=-1)
    two = eps * np.sum(Jx * (m_ell - m_L), axis=-1)
    kern = kernel if kernel is not None else plan.kernel()
    hbar = kac_of_blocks(m_L, kern)
    # sum_z kappa(x-z)(m_z - hbar_x)^2 = (kappa*m^2)(x) - hbar(x)^2 since sum kappa = 1
    local_var = kac_of_blocks(m_L**2, kern) - hbar**2
    kac = eps * np.sum(np.abs(Jx) * np.maximum(local_var, 0.0), axis=-1)
    return {
        "one_block": _time_average(one, times),
        "two_block": _time_average(two, times),
        "kac_reg": _time_average(kac, times),
    }


def replacement_residuals(trajs, plan: ScalingPlan, J, ell: int, L: int, phi_table, kernel=None,
                          n_boot: int = 1000, seed: int = 0) -> dict[str, ResidualEstimate]:
    """Monte Carlo estimates of E|residual| over replicas, with bootstrap stderr."""
    if not isinstance(trajs, (list, tuple)):
        trajs = [trajs]
    per = {"one_block": [], "two_block": [], "kac_reg": []}
    for tr in trajs:
        r = replacement_series(tr.spins, tr.sample_times_macro, plan, J, ell, L, phi_table, kernel)
        for k, v in r.items():
            per[k].append(abs(v))
    rng = np.random.default_rng(seed)
    out = {}
    for k, vals in per.items():
        v = np.asarray(vals)
        if v.size > 1:
            boots = v[rng.integers(0, v.size, size=(n_boot, v.size))].mean(axis=1)
            se = float(np.std(boots, ddof=1))
        else:
            se = float("nan")
        out[k] = ResidualEstimate(k, float(v.mean()), se, int(v.size))
    return out


def write_residual_csv(path, rows) -> None:
    """rows: iterable of (ell, L, gamma, ResidualEstimate)."""
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["ell", "L", "gamma", "residual_name", "estimate", "stderr", "n_samples"])
        for ell, L, gamma, est in rows:
            wr.writerow([ell, L, gamma, est.name, repr(est.estimate), repr(est.stderr), est.n_samples])
