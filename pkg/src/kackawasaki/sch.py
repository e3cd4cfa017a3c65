"""Spectral solver for the 1D stochastic Cahn-Hilliard equation

    dX = (-nu Lap^2 X - A Lap X + chi Lap(X^3)) dt + sigma d(grad xi)

on the unit torus, via X = Y + Z with Z the exact per-mode OU process of the
linear part and Y advanced by IMEX Euler (implicit on -nu Lap^2).

Fields live on n = 2K+1 grid points; coefficients are the rfft half-spectrum
normalized so that mode 0 is the spatial mean, u_hat(k) = (1/n) sum_j u_j e^{-2 pi i k j/n}.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .kmc import make_rng

BLOWUP = 1e6
MAPPINGS = ("stated", "effective")


class BlowUpError(RuntimeError):
    pass


@dataclass(frozen=True)
class SCHParams:
    nu: float
    A: float
    chi: float
    sigma_star: float
    n_modes: int
    dt: float
    T: float
    M: float = 0.0
    lam: float | None = None
    beta: float | None = None
    mapping: str = "stated"
    noise_filter: tuple | None = None

    def __post_init__(self):
        if self.nu <= 0:
            raise ValueError("nu must be positive")
        if self.sigma_star < 0:
            raise ValueError("sigma_star must be nonnegative")
        if self.n_modes < 1 or self.dt <= 0 or self.T < 0:
            raise ValueError("need n_modes >= 1, dt > 0, T >= 0")

    @classmethod
    def from_lambda_beta(cls, nu, lam, beta, sigma_star, n_modes, dt, T, M=0.0):
        """Coefficients A = (1+beta) lam/2, chi = lam beta/6."""
        return cls(nu, (1.0 + beta) * lam / 2.0, lam * beta / 6.0, sigma_star, n_modes, dt, T, M, lam, beta, "stated")

    @classmethod
    def from_plan(cls, plan, n_modes: int, dt: float, T: float, M: float = 0.0, mapping: str = "stated",
                  kernel=None):
        """Coefficients from a scaling plan.

        With ``kernel`` given, the per-mode noise amplitude is multiplied by
        theta(k), the Fourier transform of the Kac kernel at the plan's
        spacing, so the noise symbol matches the lattice field's.
        """
        if mapping not in MAPPINGS:
            raise ValueError(f"mapping must be one of {MAPPINGS}")
        c = plan.targets if mapping == "stated" else plan.effective
        nu = plan.nu_gamma if mapping == "stated" else c["nu"]
        filt = None
        if kernel is not None:
            filt = tuple(float(v) for v in kernel.fourier(np.arange(n_modes + 1), 1.0 / kernel.n_sites))
        return cls(nu, c["A"], c["chi"], math.sqrt(c["sigma_star_sq"]), n_modes, dt, T, M,
                   plan.lam, plan.beta, mapping, filt)

    def consistency_defect(self) -> float:
        """|A - (1+beta)lam/2| + |chi - lam beta/6| for the stated mapping."""
        if self.mapping != "stated" or self.lam is None:
            return 0.0
        return abs(self.A - (1 + self.beta) * self.lam / 2) + abs(self.chi - self.lam * self.beta / 6)

    @property
    def n_grid(self) -> int:
        return 2 * self.n_modes + 1

    @property
    def wavenumbers(self) -> np.ndarray:
        return np.arange(self.n_modes + 1)

    @property
    def k2(self) -> np.ndarray:
        return (2 * np.pi * self.wavenumbers) ** 2

    @property
    def k4(self) -> np.ndarray:
        return self.k2**2

    @property
    def noise_gain(self) -> np.ndarray:
        if self.noise_filter is None:
            return np.ones(self.n_modes + 1)
        g = np.asarray(self.noise_filter, dtype=float)
        if g.size != self.n_modes + 1:
            raise ValueError("noise_filter needs one entry per mode 0..K")
        return g


# ---------------------------------------------------------------- transforms


def to_spectral(u: np.ndarray) -> np.ndarray:
    return np.fft.rfft(u, axis=-1) / u.shape[-1]


def to_real(c: np.ndarray, n: int) -> np.ndarray:
    return np.fft.irfft(c * n, n=n, axis=-1)


def full_spectrum(c: np.ndarray, n: int) -> np.ndarray:
    """Hermitian extension of a half spectrum to all n modes (FFT order)."""
    out = np.zeros(c.shape[:-1] + (n,), dtype=complex)
    K = c.shape[-1] - 1
    out[..., : K + 1] = c
    out[..., n - K :] = np.conj(c[..., 1:][..., ::-1])
    return out


def imag_defect(c: np.ndarray, n: int) -> float:
    """Largest imaginary part after a full complex inverse transform."""
    return float(np.max(np.abs(np.fft.ifft(full_spectrum(c, n) * n, axis=-1).imag)))


def cube_dealiased(c: np.ndarray, n: int) -> np.ndarray:
    """Spectral coefficients of u^3 with 2x zero padding (alias-free for cubic)."""
    K = c.shape[-1] - 1
    m = 2 * n
    pad = np.zeros(c.shape[:-1] + (m // 2 + 1,), dtype=complex)
    pad[..., : K + 1] = c
    u = np.fft.irfft(pad * m, n=m, axis=-1)
    out = np.fft.rfft(u**3, axis=-1) / m
    return out[..., : K + 1]


# ---------------------------------------------------------------- steps


def ou_factors(k4: np.ndarray, k2: np.ndarray, nu: float, sigma_star: float, dt: float):
    """(decay, noise std) of the exact per-mode OU update; mode 0 gets (1, 0)."""
    decay = np.exp(-nu * k4 * dt)
    var = np.zeros_like(k4)
    nz = k4 > 0
    var[nz] = sigma_star**2 * k2[nz] * (-np.expm1(-2.0 * nu * k4[nz] * dt)) / (2.0 * nu * k4[nz])
    return decay, np.sqrt(var)


def complex_normals(rng: np.random.Generator, shape) -> np.ndarray:
    """Complex Gaussians with E|g|^2 = 1; the k = 0 column is zeroed."""
    g = (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / math.sqrt(2.0)
    g[..., 0] = 0.0
    return g


def z_step(Z_hat: np.ndarray, dt: float, nu: float, sigma_star: float, rng: np.random.Generator) -> np.ndarray:
    """Exact OU update Z_k <- exp(-nu (2 pi k)^4 dt) Z_k + eta_k for every mode."""
    K = Z_hat.shape[-1] - 1
    k = np.arange(K + 1)
    k2 = (2 * np.pi * k) ** 2
    decay, std = ou_factors(k2**2, k2, nu, sigma_star, dt)
    out = Z_hat * decay + std * complex_normals(rng, Z_hat.shape)
    out[..., 0] = Z_hat[..., 0]
    return out


def stationary_variance(k, nu: float, sigma_star: float) -> np.ndarray:
    k = np.asarray(k, dtype=float)
    return sigma_star**2 / (2.0 * nu * (2 * np.pi * k) ** 2)


def y_rhs(Y_hat, Z_hat, params: SCHParams) -> np.ndarray:
    """Explicit part -A Lap(Y+Z) + chi Lap((Y+Z)^3) in coefficient space."""
    U = Y_hat + Z_hat
    k2 = params.k2
    out = params.A * k2 * U
    if params.chi != 0.0:
        out = out - params.chi * k2 * cube_dealiased(U, params.n_grid)
    return out


def y_step(Y_hat, Z_hat, params: SCHParams, dt: float | None = None, source=None) -> np.ndarray:
    """One IMEX Euler step; ``source`` adds given coefficients explicitly."""
    dt = params.dt if dt is None else dt
    rhs = y_rhs(Y_hat, Z_hat, params)
    if source is not None:
        rhs = rhs + source
    out = (Y_hat + dt * rhs) / (1.0 + dt * params.nu * params.k4)
    out[..., 0] = Y_hat[..., 0]
    if not np.all(np.isfinite(out)) or np.max(np.abs(to_real(out, params.n_grid))) > BLOWUP:
        raise BlowUpError("|Y| exceeded the blow-up guard")
    return out


# ---------------------------------------------------------------- diagnostics


def hm1_sq(c: np.ndarray, k2: np.ndarray) -> np.ndarray:
    """||u - mean||^2 in H^-1 from a half spectrum."""
    w = np.zeros_like(k2)
    w[1:] = 2.0 / k2[1:]
    return np.sum(w * np.abs(c) ** 2, axis=-1)


def h1_sq(c: np.ndarray, k2: np.ndarray) -> np.ndarray:
    w = 2.0 * (1.0 + k2)
    w[0] = 1.0
    return np.sum(w * np.abs(c) ** 2, axis=-1)


def grad_sq(c: np.ndarray, k2: np.ndarray) -> np.ndarray:
    return np.sum(2.0 * k2 * np.abs(c) ** 2, axis=-1)


def inner(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """int a b dx for real fields given by half spectra."""
    s = 2.0 * np.real(np.conj(a) * b)
    s[..., 0] = np.real(np.conj(a[..., 0]) * b[..., 0])
    return np.sum(s, axis=-1)


def diagnostics(Y_hat, Z_hat, params: SCHParams) -> tuple[float, float, float, float]:
    """(mass of X, H^-1 norm of Y - mean, H^1 norm of Y, L^4 norm of Y)."""
    k2 = params.k2
    y = to_real(Y_hat, params.n_grid)
    return (
        float(np.real(Y_hat[0] + Z_hat[0])),
        float(np.sqrt(hm1_sq(Y_hat, k2))),
        float(np.sqrt(h1_sq(Y_hat, k2))),
        float(np.mean(y**4) ** 0.25),
    )


@dataclass
class SCHState:
    Y_hat: np.ndarray
    Z_hat: np.ndarray
    t: float
    diagnostics: tuple = ()


@dataclass
class SCHPath:
    times: np.ndarray
    Y: np.ndarray
    Z: np.ndarray
    diagnostics: np.ndarray
    params: SCHParams = field(repr=False, default=None)

    def X(self) -> np.ndarray:
        return self.Y + self.Z

    def state(self, i: int) -> SCHState:
        return SCHState(self.Y[i], self.Z[i], float(self.times[i]), tuple(self.diagnostics[i]))


def solve(params: SCHParams, X0, seed: int = 0, replica_id: int = 0, noise_dt: float | None = None,
          save_every: int = 1, source=None, rng: np.random.Generator | None = None) -> SCHPath:
    """Integrate from Y(0) = X0, Z(0) = 0 up to T.

    Noise is drawn at resolution ``noise_dt`` (default dt, which must be an
    integer multiple of it) and composed exactly, so runs at different dt
    sharing ``seed`` and ``noise_dt`` see the same Brownian path.
    ``source(t)`` optionally returns extra coefficients for the Y equation.
    """
    n = params.n_grid
    X0 = np.asarray(X0)
    Y = to_spectral(X0.astype(float)) if np.isrealobj(X0) and X0.shape[-1] == n else np.asarray(X0, dtype=complex).copy()
    if Y.shape[-1] != params.n_modes + 1:
        raise ValueError("X0 must be a real grid of 2K+1 values or K+1 coefficients")
    mass0 = float(np.real(Y[0]))
    if abs(mass0 - params.M) > 1e-12 * max(1.0, abs(params.M)):
        raise ValueError(f"initial mass {mass0} differs from M = {params.M}")
    Z = np.zeros_like(Y)
    noise_dt = params.dt if noise_dt is None else noise_dt
    sub = params.dt / noise_dt
    m = int(round(sub))
    if m < 1 or abs(sub - m) > 1e-9:
        raise ValueError("dt must be an integer multiple of noise_dt")
    rng = make_rng(seed, replica_id) if rng is None else rng
    n_steps = int(round(params.T / params.dt))
    k2, k4 = params.k2, params.k4
    decay, std = ou_factors(k4, k2, params.nu, params.sigma_star, noise_dt)
    std = std * params.noise_gain
    n_save = n_steps // save_every + 1
    Ys = np.zeros((n_save,) + Y.shape, dtype=complex)
    Zs = np.zeros_like(Ys)
    diag = np.zeros((n_save, 4))
    times = np.zeros(n_save)
    Ys[0], Zs[0], diag[0] = Y, Z, diagnostics(Y, Z, params)
    t = 0.0
    for step in range(1, n_steps + 1):
        Y = y_step(Y, Z, params, source=None if source is None else source(t))
        for _ in range(m):
            Z = Z * decay + std * complex_normals(rng, Z.shape)
        t = step * params.dt
        if step % save_every == 0:
            i = step // save_every
            Ys[i], Zs[i], times[i] = Y, Z, t
            diag[i] = diagnostics(Y, Z, params)
    return SCHPath(times, Ys, Zs, diag, params)


# ---------------------------------------------------------------- energy identity


def energy_rhs(Y_hat, Z_hat, params: SCHParams) -> np.ndarray:
    """-nu ||grad Y||^2 + A <Y - mean, Y+Z> - chi <Y - mean, (Y+Z)^3>.

    This is d/dt (1/2)||Y - mean||^2_{H^-1} for the Y equation.
    """
    k2 = params.k2
    U = Y_hat + Z_hat
    Y0 = Y_hat.copy()
    Y0[..., 0] = 0.0
    out = -params.nu * grad_sq(Y_hat, k2) + params.A * inner(Y0, U)
    if params.chi != 0.0:
        out = out - params.chi * inner(Y0, cube_dealiased(U, params.n_grid))
    return out


def cubic_term_quadrature(Y_hat, Z_hat, params: SCHParams, oversample: int = 8) -> float:
    """int (Y - mean)(Y+Z)^3 dx by fine real-space quadrature (independent of the dealiased route)."""
    K = params.n_modes
    m = oversample * params.n_grid
    x = np.arange(m) / m
    k = np.arange(K + 1)
    E = np.exp(2j * np.pi * np.outer(x, k))
    w = np.full(K + 1, 2.0)
    w[0] = 1.0
    y = np.real(E @ (w * Y_hat))
    z = np.real(E @ (w * Z_hat))
    return float(np.mean((y - np.real(Y_hat[0])) * (y + z) ** 3))


@dataclass
class EnergyResidual:
    pointwise: float
    integrated: float
    per_step: np.ndarray


def energy_identity_check(path: SCHPath, params: SCHParams | None = None) -> EnergyResidual:
    """Residuals of (1/2) d/dt ||Y - mean||_{H^-1}^2 = energy_rhs.

    pointwise: mean |forward difference - RHS at the left point|.
    integrated: |E(T) - E(0) - trapezoid integral of RHS| over the horizon.
    """
    params = path.params if params is None else params
    E = 0.5 * hm1_sq(path.Y, params.k2)
    rhs = energy_rhs(path.Y, path.Z, params)
    dt = np.diff(path.times)
    if dt.size == 0:
        return EnergyResidual(0.0, 0.0, np.zeros(0))
    fd = np.diff(E) / dt
    per = np.abs(fd - rhs[:-1])
    integ = abs(E[-1] - E[0] - float(np.sum(0.5 * (rhs[1:] + rhs[:-1]) * dt)))
    return EnergyResidual(float(per.mean()), float(integ), per)


def solve_ensemble(params: SCHParams, X0s: np.ndarray, seed: int, sample_times, replica_id: int = 0):
    """Vectorized solve for a batch of initial conditions (shape (R, n) or (R, K+1)).

    Returns half spectra of X = Y + Z at ``sample_times`` with shape
    (R, n_times, K+1).  One noise stream keyed by (seed, replica_id) feeds
    the whole batch.
    """
    n = params.n_grid
    X0s = np.asarray(X0s)
    Y = to_spectral(X0s.astype(float)) if np.isrealobj(X0s) and X0s.shape[-1] == n else np.asarray(X0s, dtype=complex).copy()
    Z = np.zeros_like(Y)
    rng = make_rng(seed, replica_id)
    k2, k4 = params.k2, params.k4
    decay, std = ou_factors(k4, k2, params.nu, params.sigma_star, params.dt)
    std = std * params.noise_gain
    times = np.asarray(sample_times, dtype=float)
    step_of = np.rint(times / params.dt).astype(np.int64)
    if np.any(np.abs(step_of * params.dt - times) > 1e-9 * np.maximum(1.0, times)):
        raise ValueError("sample times must be multiples of dt")
    out = np.zeros((Y.shape[0], times.size, Y.shape[-1]), dtype=complex)
    n_steps = int(step_of.max()) if times.size else 0
    for j in np.nonzero(step_of == 0)[0]:
        out[:, j] = Y + Z
    for step in range(1, n_steps + 1):
        Y = y_step(Y, Z, params)
        Z = Z * decay + std * complex_normals(rng, Z.shape)
        for j in np.nonzero(step_of == step)[0]:
            out[:, j] = Y + Z
    return out


def write_diagnostics_csv(path_out, path: SCHPath) -> None:
    with open(path_out, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["t", "mass", "Hm1", "H1", "L4"])
        for t, d in zip(path.times, path.diagnostics):
            wr.writerow([repr(float(t))] + [repr(float(v)) for v in d])


def write_path_csv(path_out, path: SCHPath) -> None:
    n = path.params.n_grid
    x = np.arange(n) / n
    with open(path_out, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["t", "x", "X"])
        for t, c in zip(path.times, path.X()):
            for xi, v in zip(x, to_real(c, n)):
                wr.writerow([repr(float(t)), repr(float(xi)), repr(float(v))])
