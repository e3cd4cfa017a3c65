"""Dynkin decomposition of <X, phi>: exact drift, its Taylor split, brackets.

Conventions.  ``smoothed_test`` returns eps * sum_j kappa(i-j) phi(eps j),
which equals eps for phi = 1.  Every formula below uses the unscaled
convolution Kphi = smoothed_test / eps.  With that placement a swap on bond i
moves <X, phi> by (eps^2/delta) d_i grad(Kphi)(i), the exact weak drift is
alpha^{-1} sum_i j_i * that amplitude, and the predictable bracket is
(eps^4/(alpha delta^2)) int sum_i d_i^2 c_i grad(Kphi)(i)^2 ds, so that at
beta = 0 in equilibrium its rate is sigma~^2 * eps * sum |grad Kphi|^2.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .coarse import ScalingPlan
from .gibbs import closure_coefficients
from .lattice import KacKernel, SpinConfig, convolve, logistic


# ---------------------------------------------------------------- logistic derivatives


def F(z):
    return logistic(z)


def F1(z):
    f = logistic(z)
    return -f * (1.0 - f)


def F2(z):
    f = logistic(z)
    return f * (1.0 - f) * (1.0 - 2.0 * f)


def check_derivatives(points=(-3.0, -0.7, 0.0, 0.4, 2.5), h: float = 1e-4, tol: float = 1e-8) -> float:
    """Max central-difference error of F1 and F2; raises if above tol."""
    worst = 0.0
    for z in points:
        d1 = (F(z + h) - F(z - h)) / (2 * h)
        d2 = (F1(z + h) - F1(z - h)) / (2 * h)
        worst = max(worst, abs(d1 - F1(z)), abs(d2 - F2(z)))
    if worst > tol:
        raise AssertionError(f"logistic derivative check failed: {worst}")
    return worst


# ---------------------------------------------------------------- test functions


def lattice_points(n: int) -> np.ndarray:
    return np.arange(n) / n


def named_test(name: str):
    """Named torus test functions: 'one', 'cos<k>', 'sin<k>', 'e<k>' (= cos), 'bump'."""
    if name == "one":
        return lambda x: np.ones_like(np.asarray(x, dtype=float))
    if name == "bump":
        def bump(x):
            y = (np.asarray(x, dtype=float) - 0.5 + 0.5) % 1.0 - 0.5
            r = np.abs(y) / 0.25
            out = np.zeros_like(r)
            inside = r < 1
            out[inside] = np.exp(1.0 - 1.0 / (1.0 - r[inside] ** 2))
            return out
        return bump
    for prefix, fn in (("cos", np.cos), ("sin", np.sin), ("e", np.cos)):
        if name.startswith(prefix) and name[len(prefix):].isdigit():
            k = int(name[len(prefix):])
            return lambda x, k=k, fn=fn: fn(2 * np.pi * k * np.asarray(x, dtype=float))
    raise ValueError(f"unknown test function {name!r}")


def smoothed_test(phi, kernel: KacKernel, N: int | None = None) -> np.ndarray:
    """eps * sum_j kappa(i - j) phi(eps j) on the 2N+1 lattice points."""
    n = kernel.n_sites if N is None else 2 * N + 1
    eps = 1.0 / n
    vals = np.asarray(phi(lattice_points(n)) if callable(phi) else phi, dtype=float)
    return eps * convolve(kernel, vals)


def kphi(phi, kernel: KacKernel) -> np.ndarray:
    return smoothed_test(phi, kernel) * kernel.n_sites


def grad(f: np.ndarray, eps: float) -> np.ndarray:
    return (np.roll(f, -1) - f) / eps


def lap(f: np.ndarray, eps: float) -> np.ndarray:
    return (np.roll(f, -1) - 2 * f + np.roll(f, 1)) / eps**2


def pairing(u: np.ndarray, v: np.ndarray, eps: float) -> float:
    return eps * float(np.dot(u, v))


def jump_weights(phi, plan: ScalingPlan, kernel: KacKernel) -> np.ndarray:
    """G(i) = (eps^2/delta) grad(Kphi)(i): change of <X, phi> per unit d_i on bond i."""
    return plan.eps**2 / plan.delta * grad(kphi(phi, kernel), plan.eps)


def observable_setup(phis, plan: ScalingPlan, kernel: KacKernel, cfg: SpinConfig):
    """Weights and initial values <X(0), phi> for a list of test functions."""
    x = lattice_points(kernel.n_sites)
    G = np.array([jump_weights(p, plan, kernel) for p in phis])
    X0 = cfg.smoothed / plan.delta
    init = np.array([pairing(X0, np.asarray(p(x), dtype=float), plan.eps) for p in phis])
    return G, init


# ---------------------------------------------------------------- drift split


@dataclass
class DriftReport:
    total: float
    lin: float
    nl: float
    rem: float
    closure: float
    closure_limit: float
    coefficients: dict = field(default_factory=dict)

    @property
    def split_defect(self) -> float:
        return abs(self.lin + self.nl + self.rem - self.total)


def _bond_arrays(cfg: SpinConfig, kernel: KacKernel, beta: float):
    s = cfg.spins.astype(float)
    h = cfg.smoothed
    d = s - np.roll(s, -1)
    a = beta * d**2 * (kernel.kappa1 - kernel.kappa0)
    b = beta * d * (h - np.roll(h, -1))
    return d, a, b


def coefficients(plan: ScalingPlan, kernel: KacKernel) -> dict:
    """Stated coefficients (A', nu, A'', beta lambda/6) for this plan."""
    lam = plan.lambda_gamma
    a0, _ = closure_coefficients(plan.L)
    return {
        "A_prime": (0.5 - plan.beta * kernel.kappa1) * lam,
        "nu": plan.nu_gamma,
        "A_second": a0 * plan.beta / 4.0 * lam,
        "chi": plan.beta * lam / 6.0,
    }


def dynkin_split(cfg: SpinConfig, plan: ScalingPlan, kernel: KacKernel, phi) -> DriftReport:
    """Exact weak drift of <X, phi> and its lin/nl/rem split at one configuration.

    j_i = d F(a + b) with a = beta d^2 (kappa(1) - kappa(0)) and
    b = beta d (h_i - h_{i+1}); lin = d F(a), nl = d F'(a) b and
    rem = d (F(a+b) - F(a) - F'(a) b).
    """
    cfg.check_cache()
    beta = plan.beta
    d, a, b = _bond_arrays(cfg, kernel, beta)
    G = jump_weights(phi, plan, kernel) / plan.alpha
    j = d * F(a + b)
    lin_i = d * F(a)
    nl_i = d * F1(a) * b
    rem_i = d * (F(a + b) - F(a) - F1(a) * b)
    eps = plan.eps
    X = cfg.smoothed / plan.delta
    gX = grad(X, eps)
    gK = grad(kphi(phi, kernel), eps)
    a0, a2 = closure_coefficients(plan.L)
    pref = beta / 4.0 * eps**3 / plan.alpha
    closure = pref * float(np.sum((a0 + a2 * plan.delta**2 * X**2) * gX * gK))
    closure_lim = pref * float(np.sum((2.0 - 2.0 * plan.delta**2 * X**2) * gX * gK))
    return DriftReport(
        total=float(np.dot(j, G)),
        lin=float(np.dot(lin_i, G)),
        nl=float(np.dot(nl_i, G)),
        rem=float(np.dot(rem_i, G)),
        closure=closure,
        closure_limit=closure_lim,
        coefficients=coefficients(plan, kernel),
    )


def remainder_per_bond(cfg: SpinConfig, plan: ScalingPlan, kernel: KacKernel) -> tuple[np.ndarray, np.ndarray]:
    """(|rem_i|, delta^2 eps^2 |grad X|^2) per bond; the ratio is bounded by sup|F''| beta^2 d^3/2."""
    d, a, b = _bond_arrays(cfg, kernel, plan.beta)
    rem = np.abs(d * (F(a + b) - F(a) - F1(a) * b))
    gX = grad(cfg.smoothed / plan.delta, plan.eps)
    return rem, plan.delta**2 * plan.eps**2 * gX**2


def linear_coefficient(plan: ScalingPlan, kernel: KacKernel) -> float:
    """F(4 beta (kappa(1) - kappa(0))): the linear current is exactly this times d_i."""
    return float(F(4.0 * plan.beta * (kernel.kappa1 - kernel.kappa0)))


@dataclass
class LinearDriftResult:
    integral_lin: float
    exact_rhs: float
    stated_rhs: float
    residual_exact: float
    residual_stated: float


def linear_drift_identity(traj, plan: ScalingPlan, kernel: KacKernel, phi) -> LinearDriftResult:
    """Compare int lin-drift ds with its closed forms over the sampled path.

    exact: lin drift = c_lin * lambda * <X, Lap phi> with c_lin = F(4 beta (k1 - k0))
    (summation by parts; the Kac smoothing is already inside X).
    stated: -A' <X, Lap phi> - nu_gamma <X, Lap^2 phi> with the stated A', nu_gamma.
    All three integrands are evaluated on the same samples and integrated by
    the trapezoid rule, so the exact residual is at roundoff.
    """
    n = kernel.n_sites
    eps = plan.eps
    x = lattice_points(n)
    p = np.asarray(phi(x), dtype=float)
    lp = lap(p, eps)
    llp = lap(lp, eps)
    coef = coefficients(plan, kernel)
    clin = linear_coefficient(plan, kernel)
    lin_vals, exact_vals, stated_vals = [], [], []
    for s, h in zip(traj.spins, traj.smoothed):
        cfg = SpinConfig.from_spins(s, kernel)
        lin_vals.append(dynkin_split(cfg, plan, kernel, phi).lin)
        X = h / plan.delta
        exact_vals.append(clin * plan.lambda_gamma * pairing(X, lp, eps))
        stated_vals.append(-coef["A_prime"] * pairing(X, lp, eps) - coef["nu"] * pairing(X, llp, eps))
    t = traj.sample_times_macro

    def integ(v):
        v = np.asarray(v)
        return float(np.trapezoid(v, t)) if v.size > 1 else 0.0

    il, ie, ist = integ(lin_vals), integ(exact_vals), integ(stated_vals)
    return LinearDriftResult(il, ie, ist, abs(il - ie), abs(il - ist))


def kac_expansion_remainder(phi, kernel: KacKernel) -> float:
    """sup |Lap(K phi) - Lap phi - (m2/2)(eps/gamma)^2 Lap^2 phi| on the lattice."""
    n = kernel.n_sites
    eps = 1.0 / n
    p = np.asarray(phi(lattice_points(n)), dtype=float)
    r = eps / kernel.gamma
    lhs = lap(kphi(phi, kernel), eps)
    rhs = lap(p, eps) + 0.5 * kernel.second_moment_discrete * r**2 * lap(lap(p, eps), eps)
    return float(np.max(np.abs(lhs - rhs)))


# ---------------------------------------------------------------- brackets


@dataclass
class BracketReport:
    times: np.ndarray
    predictable: np.ndarray
    empirical: np.ndarray
    target: np.ndarray
    discrete_target: np.ndarray
    martingale: np.ndarray
    mode_brackets: dict = field(default_factory=dict)


def continuum_target(phi_prime, sigma_star_sq: float, t, n_quad: int = 4096) -> np.ndarray:
    x = (np.arange(n_quad) + 0.5) / n_quad
    return sigma_star_sq * np.asarray(t) * float(np.mean(np.asarray(phi_prime(x)) ** 2))


def discrete_rate(phi, plan: ScalingPlan, kernel: KacKernel) -> float:
    """sigma~^2 * eps * sum |grad Kphi|^2: the bracket rate with d^2 c replaced by 1."""
    gK = grad(kphi(phi, kernel), plan.eps)
    return plan.sigma_star_sq_gamma * plan.eps * float(np.sum(gK**2))


def qv_estimate(traj, plan: ScalingPlan, kernel: KacKernel, phi, obs_index: int = 0,
                phi_prime=None) -> BracketReport:
    """Brackets of M(phi) from a trajectory run with ``phi`` registered at ``obs_index``."""
    if traj.obs is None or traj.obs.shape[-1] <= obs_index:
        raise ValueError("trajectory has no jump stream for this observable")
    t = traj.sample_times_macro
    value = traj.obs[:, 0, obs_index]
    drift = traj.obs[:, 1, obs_index]
    pred = traj.obs[:, 2, obs_index]
    emp = traj.obs[:, 3, obs_index]
    mart = value - value[0] - (drift - drift[0])
    if phi_prime is None:
        target = np.full_like(t, np.nan)
    else:
        target = continuum_target(phi_prime, plan.sigma_star_sq, t)
    return BracketReport(t, pred.copy(), emp.copy(), target, discrete_rate(phi, plan, kernel) * t, mart)


def noise_symbol_value(k: int, plan: ScalingPlan, kernel: KacKernel) -> float:
    eps = plan.eps
    D = (np.exp(2j * np.pi * k * eps) - 1.0) / eps
    theta = float(kernel.fourier(k, eps)[0])
    return float(plan.sigma_star_sq_gamma * abs(D) ** 2 * theta**2)


@dataclass
class ModeBracket:
    k: int
    estimate: float
    stderr: float
    analytic: float
    cross: float
    cross_stderr: float


def mode_bracket(trajs, plan: ScalingPlan, kernel: KacKernel, k: int, cos_index: int, sin_index: int,
                 cross_index: int | None = None) -> ModeBracket:
    """Slope of <M(k), conj M(k)> = <M(cos)> + <M(sin)> from predictable brackets.

    ``cross_index`` (a cos observable of another mode) gives the cross
    bracket <M(cos_k), M(cos_l)> slope, expected near 0.
    """
    if not isinstance(trajs, (list, tuple)):
        trajs = [trajs]
    if k == 0:
        return ModeBracket(0, 0.0, 0.0, 0.0, 0.0, 0.0)
    slopes, cross = [], []
    for tr in trajs:
        T = tr.sample_times_macro[-1]
        slopes.append((tr.pred_matrix[cos_index, cos_index] + tr.pred_matrix[sin_index, sin_index]) / T)
        if cross_index is not None:
            cross.append(tr.pred_matrix[cos_index, cross_index] / T)
    s = np.asarray(slopes)
    se = float(s.std(ddof=1) / math.sqrt(s.size)) if s.size > 1 else float("nan")
    c = np.asarray(cross) if cross else np.zeros(1)
    cse = float(c.std(ddof=1) / math.sqrt(c.size)) if c.size > 1 else float("nan")
    return ModeBracket(k, float(s.mean()), se, noise_symbol_value(k, plan, kernel), float(c.mean()), cse)


def write_bracket_csv(path, rows) -> None:
    """rows: (gamma, phi_name, estimator, value, stderr)."""
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["gamma", "phi_name", "estimator", "value", "stderr"])
        for r in rows:
            wr.writerow([r[0], r[1], r[2], repr(float(r[3])), repr(float(r[4]))])
