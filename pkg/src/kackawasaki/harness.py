"""Experiment orchestration: initial data, ensembles, micro/macro comparison."""

from __future__ import annotations

import csv
import json
import math
import platform
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from . import gibbs, kmc, sch, spectral
from .coarse import ScalingPlan, block_averages, make_plan
from .config import ExperimentConfig
from .drift import named_test, observable_setup, qv_estimate
from .lattice import KacKernel, SpinConfig

MIN_REPLICAS = 32


# ---------------------------------------------------------------- initial data


@dataclass
class InitialData:
    cfg: SpinConfig
    X0_coeffs: np.ndarray
    total_mag: int
    target_profile: np.ndarray


def _sigma_delta(m: np.ndarray, total: int | None = None) -> np.ndarray:
    """Deterministic +-1 sequence whose running sum tracks the running sum of m."""
    acc = 0.0
    out = np.empty(m.size, dtype=np.int8)
    for i, v in enumerate(m):
        acc += v
        s = 1 if acc >= 0 else -1
        out[i] = s
        acc -= s
    return out


def initial_condition(kind: str, plan: ScalingPlan, kernel: KacKernel, *, rng: np.random.Generator | None = None,
                      mbar: float = 0.0, amplitude: float = 0.0, mode: int = 1, units: str = "magnetization",
                      sampling: str = "random", n_modes: int = 16) -> InitialData:
    """Spin configuration plus the matched torus field for the SPDE side.

    bernoulli: i.i.d. spins of mean mbar.  modulated: mean profile
    m(x) = mbar + a cos(2 pi mode x), with a given in magnetization units or
    in field units (then a -> delta a).  checkerboard: alternating spins.
    X0 is the low-pass (|k| <= n_modes) of the trigonometric extension of
    X_gamma(0).
    """
    n = kernel.n_sites
    x = np.arange(n) / n
    if kind == "bernoulli":
        profile = np.full(n, mbar)
    elif kind == "modulated":
        a = amplitude * plan.delta if units == "field" else amplitude
        profile = mbar + a * np.cos(2 * np.pi * mode * x)
    elif kind == "checkerboard":
        profile = np.zeros(n)
    else:
        raise ValueError(f"unknown initial condition {kind!r}")
    if np.any(np.abs(profile) > 1):
        raise ValueError("infeasible magnetization profile (|m| > 1)")
    if kind == "checkerboard":
        spins = np.where(np.arange(n) % 2 == 0, 1, -1).astype(np.int8)
    elif sampling == "sigma_delta":
        spins = _sigma_delta(profile)
    else:
        rng = rng if rng is not None else np.random.default_rng(0)
        spins = np.where(rng.random(n) < (1 + profile) / 2, 1, -1).astype(np.int8)
    cfg = SpinConfig.from_spins(spins, kernel)
    X = cfg.smoothed / plan.delta
    full = spectral.dft(X).coeffs
    K = min(n_modes, kernel.N)
    coeffs = np.zeros(n_modes + 1, dtype=complex)
    coeffs[: K + 1] = full[: K + 1]
    return InitialData(cfg, coeffs, int(cfg.total_mag), profile)


# ---------------------------------------------------------------- ensembles


def pairings_from_field(h_samples: np.ndarray, plan: ScalingPlan, phis) -> np.ndarray:
    """<X(t), phi> for sampled smoothed fields: shape (n_times, n_phi)."""
    n = h_samples.shape[-1]
    x = np.arange(n) / n
    P = np.array([np.asarray(p(x), dtype=float) for p in phis])
    return plan.eps * (h_samples / plan.delta) @ P.T


def pairings_from_spectrum(coeffs: np.ndarray, phi_names) -> np.ndarray:
    """int X phi for half spectra and named trigonometric test functions."""
    out = []
    for name in phi_names:
        if name.startswith("e") or name.startswith("cos"):
            k = int(name.lstrip("ecos"))
            out.append(np.real(coeffs[..., k]) if k > 0 else np.real(coeffs[..., 0]))
        elif name.startswith("sin"):
            k = int(name[3:])
            out.append(-np.imag(coeffs[..., k]))
        elif name == "one":
            out.append(np.real(coeffs[..., 0]))
        else:
            raise ValueError(f"macro pairing not available for {name!r}")
    return np.stack(out, axis=-1)


@dataclass
class MicroRun:
    pairings: np.ndarray
    modes: np.ndarray
    X0: np.ndarray
    total_mag: int
    traj: kmc.Trajectory


def _micro_replica(args):
    (plan, init_kw, times, seed, rep, phi_names, n_low, keep) = args
    kernel = plan.kernel()
    rng = kmc.make_rng(seed + 7919, rep)
    init = initial_condition(init_kw["kind"], plan, kernel, rng=rng, **{k: v for k, v in init_kw.items() if k != "kind"})
    traj = kmc.run(plan, init.cfg, kernel, times, seed, rep)
    phis = [named_test(p) for p in phi_names]
    pair = pairings_from_field(traj.smoothed, plan, phis)
    n = kernel.n_sites
    modes = np.fft.fft(traj.smoothed / plan.delta, axis=-1)[:, : n_low + 1] / n
    return MicroRun(pair, modes, init.X0_coeffs, init.total_mag, traj if keep else None)


def micro_ensemble(plan: ScalingPlan, init_kw: dict, times, seed: int, replicas: int, phi_names,
                   n_low: int = 4, workers: int = 1, keep: bool = False) -> list[MicroRun]:
    jobs = [(plan, init_kw, np.asarray(times), seed, r, list(phi_names), n_low, keep) for r in range(replicas)]
    if workers > 1:
        with ProcessPoolExecutor(workers) as ex:
            return list(ex.map(_micro_replica, jobs))
    return [_micro_replica(j) for j in jobs]


def macro_ensemble(params: sch.SCHParams, X0s: np.ndarray, times, seed: int, phi_names, n_low: int = 4):
    """(pairings (R, T, P), low modes (R, T, n_low+1)) from the vectorized solver."""
    out = sch.solve_ensemble(params, X0s, seed, times)
    return pairings_from_spectrum(out, phi_names), out[..., : n_low + 1]


# ---------------------------------------------------------------- comparison


@dataclass
class Cell:
    phi: str
    t: float
    stats: dict


@dataclass
class ComparisonReport:
    gamma: float | None
    cells: list
    hminus3: dict = field(default_factory=dict)
    n_micro: int = 0
    n_macro: int = 0

    def cell(self, phi, t) -> Cell:
        for c in self.cells:
            if c.phi == phi and abs(c.t - t) < 1e-12:
                return c
        raise KeyError((phi, t))

    def rows(self):
        for c in self.cells:
            for metric in ("mean", "var", "m2", "ks"):
                s = c.stats
                yield (self.gamma, c.phi, c.t, metric, s[f"{metric}_a"], s[f"{metric}_b"], s[f"{metric}_gap"],
                       s[f"{metric}_lo"], s[f"{metric}_hi"])


def ks_statistic(a: np.ndarray, b: np.ndarray, tol: float = 1e-9) -> float:
    """Two-sample KS distance; values closer than ``tol`` count as ties."""
    a = np.round(np.sort(a) / tol) * tol
    b = np.round(np.sort(b) / tol) * tol
    grid = np.concatenate([a, b])
    fa = np.searchsorted(a, grid, side="right") / a.size
    fb = np.searchsorted(b, grid, side="right") / b.size
    return float(np.max(np.abs(fa - fb)))


def _moments(a: np.ndarray) -> tuple[float, float, float]:
    return float(a.mean()), float(a.var(ddof=1)), float(np.mean(a**2))


def compare(micro: np.ndarray, macro: np.ndarray, phi_names, times, *, n_boot: int = 400, seed: int = 0,
            micro_modes: np.ndarray | None = None, macro_modes: np.ndarray | None = None,
            gamma: float | None = None, min_replicas: int = MIN_REPLICAS, z: float = 3.0) -> ComparisonReport:
    """Moment gaps between two ensembles of pairings, shape (R, n_times, n_phi).

    Signed differences (a - b) get intervals point +- z * bootstrap standard
    error (replicas resampled independently within each ensemble); the reported
    gap is the absolute difference.  KS is computed on samples standardized
    by the second ensemble's mean and standard deviation.
    """
    micro = np.asarray(micro)
    macro = np.asarray(macro)
    if micro.shape[0] < min_replicas or macro.shape[0] < min_replicas:
        raise ValueError(f"ensembles too small (need >= {min_replicas} replicas)")
    rng = np.random.default_rng(seed)
    ia = rng.integers(0, micro.shape[0], size=(n_boot, micro.shape[0]))
    ib = rng.integers(0, macro.shape[0], size=(n_boot, macro.shape[0]))
    cells = []
    for ti, t in enumerate(times):
        for pi, name in enumerate(phi_names):
            a = micro[:, ti, pi]
            b = macro[:, ti, pi]
            ma, va, sa = _moments(a)
            mb, vb, sb = _moments(b)
            scale = math.sqrt(vb) if vb > 1e-20 else 1.0
            ks = ks_statistic((a - mb) / scale, (b - mb) / scale)
            A = a[ia]
            B = b[ib]
            d_mean = A.mean(axis=1) - B.mean(axis=1)
            d_var = A.var(axis=1, ddof=1) - B.var(axis=1, ddof=1)
            d_m2 = np.mean(A**2, axis=1) - np.mean(B**2, axis=1)
            ks_b = np.array([ks_statistic((A[j] - mb) / scale, (B[j] - mb) / scale) for j in range(min(n_boot, 200))])
            st = {
                "mean_a": ma, "mean_b": mb, "mean_gap": abs(ma - mb),
                "var_a": va, "var_b": vb, "var_gap": abs(va - vb),
                "m2_a": sa, "m2_b": sb, "m2_gap": abs(sa - sb),
                "ks_a": float("nan"), "ks_b": float("nan"), "ks_gap": ks,
            }
            point = {"mean": ma - mb, "var": va - vb, "m2": sa - sb, "ks": ks}
            for key, arr in (("mean", d_mean), ("var", d_var), ("m2", d_m2), ("ks", ks_b)):
                se = float(np.std(arr, ddof=1))
                st[f"{key}_se"] = se
                st[f"{key}_lo"] = point[key] - z * se
                st[f"{key}_hi"] = point[key] + z * se
            cells.append(Cell(name, float(t), st))
    hm3 = {}
    if micro_modes is not None and macro_modes is not None:
        kk = np.arange(1, micro_modes.shape[-1])
        w = (2 * np.pi * kk) ** -6.0
        for ti, t in enumerate(times):
            ea = np.mean(np.abs(micro_modes[:, ti, 1:]) ** 2, axis=0)
            eb = np.mean(np.abs(macro_modes[:, ti, 1:]) ** 2, axis=0)
            hm3[float(t)] = float(np.sum(w * np.abs(ea - eb)))
    return ComparisonReport(gamma, cells, hm3, micro.shape[0], macro.shape[0])


def self_test_passes(report: ComparisonReport, metrics=("mean", "var")) -> bool:
    """Every signed difference interval contains 0."""
    for c in report.cells:
        for m in metrics:
            if not c.stats[f"{m}_lo"] <= 0.0 <= c.stats[f"{m}_hi"]:
                return False
    return True


@dataclass
class TrendTable:
    rows: list
    fraction: float
    gammas: list


def trend_table(reports: dict, metric: str = "m2") -> TrendTable:
    """For each (phi, t): is the gap nonincreasing as gamma decreases?"""
    gammas = sorted(reports, reverse=True)
    base = reports[gammas[0]]
    rows = []
    for c in base.cells:
        gaps = [reports[g].cell(c.phi, c.t).stats[f"{metric}_gap"] for g in gammas]
        ok = all(b <= a for a, b in zip(gaps, gaps[1:]))
        rows.append((c.phi, c.t, gaps, ok))
    frac = sum(r[3] for r in rows) / len(rows) if rows else 0.0
    return TrendTable(rows, frac, gammas)


def fit_decay_rate(times: np.ndarray, means: np.ndarray) -> float:
    """Least-squares slope of -log|mean| against t."""
    m = np.abs(np.asarray(means))
    keep = m > 0
    t = np.asarray(times)[keep]
    y = np.log(m[keep])
    slope = np.polyfit(t, y, 1)[0]
    return float(-slope)


def effective_linear_rate(k: int, plan: ScalingPlan, params: sch.SCHParams | None = None) -> float:
    """Decay rate nu (2 pi k)^4 - A (2 pi k)^2 of mode k for the linearized SPDE."""
    q = (2 * np.pi * k) ** 2
    if params is None:
        c = plan.effective
        return c["nu"] * q**2 - c["A"] * q
    return params.nu * q**2 - params.A * q


def write_comparison_csv(path, reports) -> None:
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["gamma", "phi", "t", "metric", "ensemble_a", "ensemble_b", "gap", "diff_lo", "diff_hi"])
        for rep in reports:
            for row in rep.rows():
                wr.writerow([row[0], row[1], repr(row[2])] + [row[3]] + [repr(float(v)) for v in row[4:]])


def write_trend_csv(path, table: TrendTable) -> None:
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["phi", "t"] + [f"gap_gamma_{g}" for g in table.gammas] + ["nonincreasing"])
        for phi, t, gaps, ok in table.rows:
            wr.writerow([phi, repr(t)] + [repr(float(g)) for g in gaps] + [int(ok)])


def lag1_crosscorrelation(series: np.ndarray) -> float:
    """Largest |corr| between consecutive replicas' series (independence sanity check)."""
    worst = 0.0
    for a, b in zip(series[:-1], series[1:]):
        if np.std(a) > 0 and np.std(b) > 0:
            worst = max(worst, abs(float(np.corrcoef(a, b)[0, 1])))
    return worst


# ---------------------------------------------------------------- runs


def _plans(config: ExperimentConfig) -> list[ScalingPlan]:
    plans = []
    Ns = config["plan.N"]
    for i, g in enumerate(config["plan.gamma"]):
        plans.append(make_plan(
            g, Ns[i] if Ns else None, config["plan.lambda"], config["plan.sigma_star_sq"], config["plan.beta"],
            config["plan.mode"], r=config["plan.r"] if not Ns else None, exponent=config["plan.exponent"],
            profile=config["plan.profile"], convention=config["plan.convention"]))
    return plans


def _init_kw(config: ExperimentConfig) -> dict:
    return {
        "kind": config["initial.kind"], "mbar": config["initial.mbar"], "amplitude": config["initial.amplitude"],
        "mode": config["initial.mode"], "units": config["initial.units"], "sampling": config["initial.sampling"],
        "n_modes": config["spde.n_modes"],
    }


def _manifest(config: ExperimentConfig, seeds, extra=None) -> dict:
    import numba

    m = {
        "config_hash": config.hash(),
        "code_version": __version__,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "numba": numba.__version__,
        "seeds": seeds,
    }
    if extra:
        m.update(extra)
    return m


@dataclass
class RunResult:
    directory: Path
    passed: bool
    checks: dict


def run_experiment(config: ExperimentConfig, output_dir=None) -> RunResult:
    out = Path(output_dir if output_dir is not None else config["output_dir"])
    out.mkdir(parents=True, exist_ok=True)
    kind = config["run_kind"]
    runner = {"simulate": _run_simulate, "spde": _run_spde, "oracle": _run_oracle,
              "compare": _run_compare, "symbol_audit": _run_symbol_audit}[kind]
    checks = runner(config, out)
    config.save(out / "config.txt")
    seeds = [[config["seed"], r] for r in range(config["replicas"])]
    with open(out / "manifest.json", "w") as fh:
        json.dump(_manifest(config, seeds, {"run_kind": kind, "checks": checks}), fh, indent=2, sort_keys=True)
        fh.write("\n")
    passed = all(bool(v) for v in checks.values())
    return RunResult(out, passed, checks)


def _run_simulate(config: ExperimentConfig, out: Path) -> dict:
    times = np.asarray(config["schedule.times"])
    names = config["test_functions"]
    checks = {}
    for plan in _plans(config):
        kernel = plan.kernel()
        init_kw = _init_kw(config)
        finals = []
        for rep in range(config["replicas"]):
            rng = kmc.make_rng(config["seed"] + 7919, rep)
            init = initial_condition(init_kw["kind"], plan, kernel, rng=rng,
                                     **{k: v for k, v in init_kw.items() if k != "kind"})
            phis = [named_test(p) for p in names]
            G, g0 = observable_setup(phis, plan, kernel, init.cfg)
            traj = kmc.run(plan, init.cfg, kernel, times, config["seed"], rep, obs_weights=G, obs_init=g0)
            tag = f"gamma{plan.gamma}"
            kmc.write_series_csv(out / kmc.replica_filename(f"field_{tag}", config["seed"], rep), traj,
                                 plan.eps, plan.delta)
            with open(out / kmc.replica_filename(f"obs_{tag}", config["seed"], rep), "w", newline="") as fh:
                wr = csv.writer(fh)
                wr.writerow(["t_macro", "observable_name", "value"])
                for ti, t in enumerate(traj.sample_times_macro):
                    wr.writerow([repr(float(t)), "total_mag", int(traj.total_mag[ti])])
                    mass = plan.eps * float(traj.smoothed[ti].sum()) / plan.delta
                    wr.writerow([repr(float(t)), "mass", repr(mass)])
                    for pi, name in enumerate(names):
                        for row, label in enumerate(("pairing", "drift_integral", "bracket_predictable",
                                                     "bracket_empirical")):
                            wr.writerow([repr(float(t)), f"{label}:{name}", repr(float(traj.obs[ti, row, pi]))])
            checks[f"conservation_{plan.gamma}_{rep}"] = bool(np.all(traj.total_mag == init.total_mag))
            finals.append(traj.smoothed[-1])
        if len(finals) > 2:
            rho = lag1_crosscorrelation(np.asarray(finals))
            checks[f"independence_{plan.gamma}"] = rho < 4.0 / math.sqrt(plan.n_sites)
        with open(out / f"plan_gamma{plan.gamma}.txt", "w") as fh:
            fh.write(plan.summary() + "\n")
    return checks


def _spde_params(config: ExperimentConfig, plan: ScalingPlan | None, M: float) -> sch.SCHParams:
    K, dt, T = config["spde.n_modes"], config["spde.dt"], config["spde.T"]
    if config["spde.nu"] > 0 or plan is None:
        return sch.SCHParams(config["spde.nu"] or 1e-3, config["spde.A"], config["spde.chi"],
                             config["spde.sigma_star"], K, dt, T, M)
    kernel = plan.kernel() if config["spde.noise_filter"] and config["spde.mapping"] == "effective" else None
    return sch.SCHParams.from_plan(plan, K, dt, T, M, config["spde.mapping"], kernel=kernel)


def _run_spde(config: ExperimentConfig, out: Path) -> dict:
    K = config["spde.n_modes"]
    n = 2 * K + 1
    x = np.arange(n) / n
    X0 = config["spde.x0_amplitude"] * np.cos(2 * np.pi * x)
    plan = _plans(config)[0] if config["spde.nu"] <= 0 else None
    params = _spde_params(config, plan, float(X0.mean()))
    checks = {}
    for rep in range(config["replicas"]):
        path = sch.solve(params, X0, config["seed"], rep, save_every=max(1, int(round(params.T / params.dt / 200))))
        sch.write_diagnostics_csv(out / kmc.replica_filename("spde_diag", config["seed"], rep), path)
        sch.write_path_csv(out / kmc.replica_filename("spde_path", config["seed"], rep), path)
        mass = path.diagnostics[:, 0]
        checks[f"mass_{rep}"] = bool(np.max(np.abs(mass - mass[0])) <= 1e-13)
        checks[f"real_{rep}"] = sch.imag_defect(path.X(), n) < 1e-12
    return checks


def initial_entropy_evidence(N_small: int, M: int, kernel: KacKernel, beta: float) -> float:
    """H(uniform on sector | canonical Gibbs) for a small sector, to compare with C N."""
    _, mu, _, _ = kmc.sector_generator(N_small, M, kernel, beta)
    f = np.full(mu.size, 1.0 / mu.size)
    return gibbs.relative_entropy(f, mu)


def _run_oracle(config: ExperimentConfig, out: Path) -> dict:
    from .lattice import build_kernel

    kernel = build_kernel(config["oracle.profile"], config["oracle.gamma"], max(30, 2 * config["oracle.L_max"] + 2))
    beta = config["oracle.beta"]
    rows = gibbs.oracle_table(range(1, config["oracle.L_max"] + 1), kernel, beta)
    with open(out / "oracle_phi.csv", "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["L", "m", "phi_enumerated", "phi_closed_form", "tv_bound"])
        for L, m, pe, pc, tvb in rows:
            wr.writerow([L, repr(m), repr(pe), repr(pc), repr(tvb)])
    ok = all(abs(pe - pc) <= tvb + 1e-12 for _, _, pe, pc, tvb in rows)
    small = build_kernel(config["oracle.profile"], min(config["oracle.gamma"], 0.24), 4)
    H = initial_entropy_evidence(4, 1, small, beta)
    with open(out / "oracle_entropy.csv", "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["N_small", "M", "relative_entropy", "N"])
        wr.writerow([4, 1, repr(H), 9])
    return {"phi_within_tv_bound": ok}


def _run_symbol_audit(config: ExperimentConfig, out: Path) -> dict:
    consts = []
    with open(out / "symbol_audit.csv", "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["eps", "k_max", "c", "C", "C_consistency"])
        for eps in config["symbol.eps"]:
            s = spectral.symbol_check(eps, config["symbol.k_max"])
            consts.append(s)
            wr.writerow([repr(eps), config["symbol.k_max"], repr(s.c), repr(s.C), repr(s.C_consistency)])
    ok = True
    for attr in ("c", "C", "C_consistency"):
        v = [getattr(s, attr) for s in consts]
        ok = ok and max(v) / min(v) < 2.0
    return {"constants_stable": ok}


def compare_gamma(plan: ScalingPlan, config: ExperimentConfig, times, names, seed: int, replicas: int,
                  macro_replicas: int, workers: int = 1):
    """Micro ensemble, paired macro ensemble, and an independent macro ensemble for the self-test."""
    init_kw = _init_kw(config)
    runs = micro_ensemble(plan, init_kw, times, seed, replicas, names, workers=workers)
    micro = np.array([r.pairings for r in runs])
    micro_modes = np.array([r.modes for r in runs])
    X0s = np.array([r.X0 for r in runs])
    if macro_replicas != replicas:
        X0s = X0s[np.arange(macro_replicas) % replicas]
    params = _spde_params(config, plan, float(np.real(X0s[0, 0])))
    macro, macro_modes = macro_ensemble(params, X0s, times, seed + 1, names)
    macro2, _ = macro_ensemble(params, X0s, times, seed + 2, names)
    nb = config["compare.bootstrap"]
    mr = config["compare.min_replicas"]
    rep = compare(micro, macro, names, times, n_boot=nb, seed=seed, micro_modes=micro_modes,
                  macro_modes=macro_modes, gamma=plan.gamma, min_replicas=mr)
    selftest = compare(macro2, macro, names, times, n_boot=nb, seed=seed + 3, gamma=plan.gamma, min_replicas=mr)
    return rep, selftest, params


def _run_compare(config: ExperimentConfig, out: Path) -> dict:
    times = list(config["schedule.times"])
    names = config["test_functions"]
    R = config["replicas"]
    Rm = config["compare.macro_replicas"] or R
    reports, selftests = {}, {}
    for plan in _plans(config):
        rep, st, params = compare_gamma(plan, config, times, names, config["seed"], R, Rm, config.worker_count())
        reports[plan.gamma] = rep
        selftests[plan.gamma] = st
        with open(out / f"plan_gamma{plan.gamma}.txt", "w") as fh:
            fh.write(plan.summary() + "\n")
            fh.write(f"spde: nu={params.nu!r} A={params.A!r} chi={params.chi!r} sigma*={params.sigma_star!r}\n")
    write_comparison_csv(out / "comparison.csv", reports.values())
    write_comparison_csv(out / "selftest.csv", selftests.values())
    checks = {f"selftest_{g}": self_test_passes(s) for g, s in selftests.items()}
    if len(reports) > 1:
        table = trend_table(reports)
        write_trend_csv(out / "trend.csv", table)
        checks["trend"] = table.fraction >= config["compare.trend_fraction"]
    return checks
