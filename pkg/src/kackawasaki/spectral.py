"""Lattice Fourier extension, difference-operator symbols and Sobolev norms.

Coefficients follow u_hat(k) = eps * sum_j u_j exp(-2 pi i k eps j) with
eps = 1/(2N+1), so that Ext(u)(x) = sum_k u_hat(k) exp(2 pi i k x)
interpolates u at the lattice points.  Arrays are stored in numpy FFT
order; ``modes`` holds the signed wavenumbers.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .lattice import KacKernel


@dataclass
class SpectralField:
    coeffs: np.ndarray
    n_modes: int
    real_space_len: int

    @property
    def eps(self) -> float:
        return 1.0 / self.real_space_len

    @property
    def modes(self) -> np.ndarray:
        return wavenumbers(self.real_space_len)

    def is_hermitian(self, tol: float = 1e-12) -> bool:
        c = self.coeffs
        flipped = np.conj(c[(-np.arange(c.size)) % c.size])
        return bool(np.max(np.abs(c - flipped), initial=0.0) <= tol * max(1.0, np.max(np.abs(c), initial=0.0)))


def wavenumbers(n: int) -> np.ndarray:
    return np.rint(np.fft.fftfreq(n, 1.0 / n)).astype(np.int64)


def dft(values, n_expected: int | None = None) -> SpectralField:
    values = np.asarray(values)
    n = values.shape[-1]
    if n_expected is not None and n != n_expected:
        raise ValueError(f"field length {n} != {n_expected}")
    if n % 2 == 0:
        raise ValueError("lattice length must be odd (2N+1)")
    return SpectralField(np.fft.fft(values, axis=-1) / n, n, n)


def idft(field: SpectralField, real: bool = True) -> np.ndarray:
    out = np.fft.ifft(field.coeffs, axis=-1) * field.real_space_len
    return out.real if real else out


def ext_eval(field: SpectralField, x) -> np.ndarray:
    """Evaluate the trigonometric extension at arbitrary torus points."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    k = field.modes
    return (np.exp(2j * np.pi * np.outer(x, k)) @ field.coeffs).real


def parseval_defect(values) -> float:
    u = np.asarray(values)
    f = dft(u)
    lhs = float(np.sum(np.abs(f.coeffs) ** 2))
    rhs = float(np.sum(np.abs(u) ** 2) / u.size)
    return abs(lhs - rhs) / max(rhs, 1e-300)


# ---------------------------------------------------------------- symbols


def lap_symbol(k, eps: float) -> np.ndarray:
    """mu(k) = (4/eps^2) sin^2(pi k eps): symbol of minus the discrete Laplacian."""
    k = np.asarray(k, dtype=float)
    return 4.0 / eps**2 * np.sin(np.pi * k * eps) ** 2


def bilap_symbol(k, eps: float) -> np.ndarray:
    return lap_symbol(k, eps) ** 2


def grad_symbol(k, eps: float) -> np.ndarray:
    """D(k) = (exp(2 pi i k eps) - 1)/eps, forward difference."""
    k = np.asarray(k, dtype=float)
    return (np.exp(2j * np.pi * k * eps) - 1.0) / eps


@dataclass
class SymbolTable:
    modes: np.ndarray
    eps: float
    lap: np.ndarray
    bilap: np.ndarray
    grad: np.ndarray
    theta: np.ndarray | None
    noise: np.ndarray | None


def symbol_table(n: int, kernel: KacKernel | None = None, sigma_tilde_sq: float = 1.0,
                 cutoff: float | None = None) -> SymbolTable:
    """Symbols on the full zone |k| <= N.  ``cutoff`` (in units of 1/gamma)
    zeroes the noise symbol above c/gamma as an optional low-pass."""
    eps = 1.0 / n
    k = wavenumbers(n)
    lap = lap_symbol(k, eps)
    D = grad_symbol(k, eps)
    theta = noise = None
    if kernel is not None:
        theta = kernel.fourier(k, eps)
        noise = sigma_tilde_sq * np.abs(D) ** 2 * theta**2
        if cutoff is not None:
            noise = np.where(np.abs(k) <= cutoff / kernel.gamma, noise, 0.0)
    return SymbolTable(k, eps, lap, lap**2, D, theta, noise)


def noise_symbol(k, eps: float, kernel: KacKernel, sigma_tilde_sq: float) -> np.ndarray:
    """q(k) = sigma_tilde^2 |D(k)|^2 |theta(k)|^2."""
    return sigma_tilde_sq * np.abs(grad_symbol(k, eps)) ** 2 * kernel.fourier(k, eps) ** 2


@dataclass
class SymbolConstants:
    c: float
    C: float
    C_consistency: float


def symbol_check(eps: float, k_max: int) -> SymbolConstants:
    """Envelope constants for c k^4 <= bilap <= C k^4 and |bilap - (2 pi k)^4| <= C' eps^2 k^6."""
    n = int(round(1.0 / eps))
    if k_max > n / 2:
        raise ValueError("k_max must not exceed N/2")
    k = np.arange(1, k_max + 1, dtype=float)
    b = bilap_symbol(k, eps)
    ratio = b / k**4
    cons = np.abs(b - (2 * np.pi * k) ** 4) / (eps**2 * k**6)
    return SymbolConstants(float(ratio.min()), float(ratio.max()), float(cons.max()))


# ---------------------------------------------------------------- norms


def sobolev_norm(field, s: float, weight: str = "lap") -> float:
    """Squared-norm root sqrt(sum (1 + w(k))^s |u_hat(k)|^2).

    weight='lap' uses the discrete Laplacian symbol (the H^s scale),
    weight='bilap' the bi-Laplacian symbol (an H^{2s} scale),
    weight='continuum' uses |k|^2.
    """
    f = field if isinstance(field, SpectralField) else dft(field)
    k = f.modes
    if weight == "lap":
        w = lap_symbol(k, f.eps)
    elif weight == "bilap":
        w = bilap_symbol(k, f.eps)
    elif weight == "continuum":
        w = k.astype(float) ** 2
    else:
        raise ValueError(f"unknown weight {weight!r}")
    return float(np.sqrt(np.sum((1.0 + w) ** s * np.abs(f.coeffs) ** 2)))


def norm_equivalence(n: int, s: float) -> tuple[float, float]:
    """Exact (min, max) over the zone of (1+mu(k))^s / (1+k^2)^s."""
    k = wavenumbers(n)
    r = ((1.0 + lap_symbol(k, 1.0 / n)) / (1.0 + k.astype(float) ** 2)) ** s
    return float(r.min()), float(r.max())


def norm_ratio(values, s: float) -> float:
    f = dft(values)
    cont = sobolev_norm(f, s, "continuum")
    return sobolev_norm(f, s, "lap") / cont if cont > 0 else 1.0


# ---------------------------------------------------------------- semigroup


def semigroup_apply(field, t: float, nu: float) -> SpectralField:
    if t < 0 or nu <= 0:
        raise ValueError("need t >= 0 and nu > 0")
    f = field if isinstance(field, SpectralField) else dft(field)
    factor = np.exp(-t * nu * bilap_symbol(f.modes, f.eps))
    return SpectralField(f.coeffs * factor, f.n_modes, f.real_space_len)


@dataclass
class SemigroupReport:
    convergence: dict
    dyadic_constant: float
    dyadic_table: dict
    increment_constant: float


def semigroup_estimates(eps_list, T: float, theta: float, nu: float = 1.0, k_fixed=(1, 2, 3),
                        t_grid=None) -> SemigroupReport:
    """Numerical checks of the discrete bi-Laplacian semigroup.

    convergence[k]: sup_t |exp(-t nu bilap(k)) - exp(-t nu (2 pi k)^4)| per eps.
    dyadic: sup over blocks q of 2^q * max_{2^q <= |k| < 2^{q+1}}
            int_0^T exp(-2(T-r) nu bilap(k)) k^2 dr.
    increment: sup |exp(-t mu) - exp(-s mu)| / (mu |t-s|)^theta, which is <= 1.
    """
    if not 0 < theta < 0.25:
        raise ValueError("theta must lie in (0, 1/4)")
    t_grid = np.linspace(0.0, T, 41) if t_grid is None else np.asarray(t_grid)
    conv = {}
    for k in k_fixed:
        conv[k] = []
        for eps in eps_list:
            a = np.exp(-t_grid * nu * bilap_symbol(k, eps))
            b = np.exp(-t_grid * nu * (2 * np.pi * k) ** 4)
            conv[k].append(float(np.max(np.abs(a - b))))
    eps = min(eps_list)
    n = int(round(1.0 / eps))
    kmax = (n - 1) // 2
    table = {}
    q = 0
    while 2**q <= kmax:
        ks = np.arange(2**q, min(2 ** (q + 1), kmax + 1), dtype=float)
        lam = nu * bilap_symbol(ks, eps)
        integral = ks**2 * (1.0 - np.exp(-2.0 * T * lam)) / (2.0 * lam)
        table[q] = float(integral.max())
        q += 1
    dyadic = max(2.0**q * v for q, v in table.items())
    ks = np.arange(1, kmax + 1, dtype=float)
    mu = nu * bilap_symbol(ks, eps)
    worst = 0.0
    for s in t_grid:
        for t in t_grid:
            if t <= s:
                continue
            num = np.abs(np.exp(-t * mu) - np.exp(-s * mu))
            den = (mu * (t - s)) ** theta
            worst = max(worst, float(np.max(num / den)))
    return SemigroupReport(conv, dyadic, table, worst)


def write_spectrum_csv(path, field: SpectralField) -> None:
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["k", "re", "im"])
        for k, c in zip(field.modes, field.coeffs):
            wr.writerow([int(k), repr(float(c.real)), repr(float(c.imag))])
