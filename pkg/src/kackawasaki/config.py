"""Plain-text key/value experiment configuration.

One ``dotted.key = value`` per line, ``#`` starts a comment, lists are
comma separated.  Every key is declared in ``SCHEMA`` with its type,
default and a one-line description; ``schema_text()`` renders the table
shipped in the docs.  Serialization is canonical (sorted keys, ``repr``
floats) so a config round-trips through text losslessly and hashes stably.
"""

from __future__ import annotations

import hashlib
import os
from dataclasses import dataclass, field
from pathlib import Path

RUN_KINDS = ("simulate", "spde", "oracle", "compare", "symbol_audit")


class ConfigError(ValueError):
    pass


# key: (type, default, description, choices)
SCHEMA: dict[str, tuple] = {
    "run_kind": ("str", "simulate", "what to run", RUN_KINDS),
    "seed": ("int", 0, "base seed; replica r uses the stream (seed, r)", None),
    "replicas": ("int", 2, "replicas per ensemble", None),
    "output_dir": ("str", "artifacts", "directory receiving results", None),
    "workers": ("int", 1, "worker processes (env KACKAWASAKI_WORKERS overrides)", None),
    "assertions": ("bool", True, "exit nonzero when a configured check fails", None),
    "plan.gamma": ("floats", [0.1], "Kac range parameters", None),
    "plan.N": ("ints", [], "lattice half sizes, one per gamma (empty: derive from plan.r)", None),
    "plan.r": ("float", 0.02, "locked eps/gamma ratio", None),
    "plan.mode": ("str", "ratio_locked", "scaling mode", ("ratio_locked", "user_exponents")),
    "plan.exponent": ("float", 1.5, "N = gamma^-exponent in user_exponents mode", None),
    "plan.lambda": ("float", 1.0, "target lambda = eps^2/alpha", None),
    "plan.sigma_star_sq": ("float", 1.0, "target noise strength", None),
    "plan.beta": ("float", 0.0, "inverse temperature", None),
    "plan.profile": ("str", "gaussian", "kernel profile", ("gaussian", "raised_cosine", "triangular")),
    "plan.convention": ("str", "unit", "lattice spacing convention", ("unit", "inverse_n")),
    "schedule.times": ("floats", [0.0, 0.01], "macroscopic sample times", None),
    "test_functions": ("strs", ["e1"], "named test functions (e<k>, cos<k>, sin<k>, bump, one)", None),
    "initial.kind": ("str", "bernoulli", "initial spin law", ("bernoulli", "modulated", "checkerboard")),
    "initial.mbar": ("float", 0.0, "mean magnetization", None),
    "initial.amplitude": ("float", 0.0, "modulation amplitude", None),
    "initial.mode": ("int", 1, "modulation wavenumber", None),
    "initial.units": ("str", "magnetization", "amplitude units", ("magnetization", "field")),
    "initial.sampling": ("str", "random", "spin assignment", ("random", "sigma_delta")),
    "spde.n_modes": ("int", 16, "retained Fourier modes K (grid 2K+1)", None),
    "spde.dt": ("float", 1e-3, "time step", None),
    "spde.T": ("float", 0.1, "horizon for standalone spde runs", None),
    "spde.mapping": ("str", "effective", "coefficient mapping from the plan", ("stated", "effective")),
    "spde.noise_filter": ("bool", True, "filter noise by the kernel transform (effective mapping)", None),
    "spde.nu": ("float", 0.0, "manual nu for spde runs (0: take from plan)", None),
    "spde.A": ("float", 0.0, "manual A when spde.nu > 0", None),
    "spde.chi": ("float", 0.0, "manual chi when spde.nu > 0", None),
    "spde.sigma_star": ("float", 0.0, "manual sigma* when spde.nu > 0", None),
    "spde.x0_amplitude": ("float", 0.0, "manual initial cos(2 pi x) amplitude", None),
    "compare.min_replicas": ("int", 32, "smallest ensemble accepted by compare", None),
    "compare.bootstrap": ("int", 400, "bootstrap resamples", None),
    "compare.trend_fraction": ("float", 0.8, "required fraction of nonincreasing cells", None),
    "compare.macro_replicas": ("int", 0, "macro ensemble size (0: same as replicas)", None),
    "oracle.L_max": ("int", 4, "largest block half-width", None),
    "oracle.beta": ("float", 0.0, "oracle inverse temperature", None),
    "oracle.gamma": ("float", 0.1, "oracle kernel gamma", None),
    "oracle.profile": ("str", "gaussian", "oracle kernel profile", ("gaussian", "raised_cosine", "triangular")),
    "symbol.eps": ("floats", [1 / 64, 1 / 128, 1 / 256], "lattice spacings audited", None),
    "symbol.k_max": ("int", 16, "largest audited wavenumber", None),
}


def _parse(kind: str, raw: str, key: str):
    raw = raw.strip()
    try:
        if kind == "str":
            return raw
        if kind == "int":
            return int(raw)
        if kind == "float":
            return float(raw)
        if kind == "bool":
            low = raw.lower()
            if low in ("true", "yes", "1", "on"):
                return True
            if low in ("false", "no", "0", "off"):
                return False
            raise ValueError(raw)
        items = [x.strip() for x in raw.split(",") if x.strip()]
        if kind == "floats":
            return [float(x) for x in items]
        if kind == "ints":
            return [int(x) for x in items]
        if kind == "strs":
            return items
    except ValueError as exc:
        raise ConfigError(f"{key}: cannot parse {raw!r} as {kind}") from exc
    raise ConfigError(f"{key}: unknown type {kind}")


def _format(kind: str, value) -> str:
    if kind == "float":
        return repr(float(value))
    if kind == "bool":
        return "true" if value else "false"
    if kind == "floats":
        return ", ".join(repr(float(v)) for v in value)
    if kind in ("ints", "strs"):
        return ", ".join(str(v) for v in value)
    return str(value)


@dataclass
class ExperimentConfig:
    values: dict = field(default_factory=dict)

    def __post_init__(self):
        full = {k: (list(v[1]) if isinstance(v[1], list) else v[1]) for k, v in SCHEMA.items()}
        for k, v in self.values.items():
            if k not in SCHEMA:
                raise ConfigError(f"{k}: unknown key")
            full[k] = v
        self.values = full
        self.validate()

    def __getitem__(self, key):
        return self.values[key]

    def with_updates(self, **updates) -> "ExperimentConfig":
        vals = dict(self.values)
        for k, v in updates.items():
            vals[k.replace("__", ".")] = v
        return ExperimentConfig(vals)

    def validate(self) -> None:
        for key, (kind, _, _, choices) in SCHEMA.items():
            v = self.values[key]
            expect = {"str": str, "int": int, "float": (int, float), "bool": bool,
                      "floats": list, "ints": list, "strs": list}[kind]
            if not isinstance(v, expect) or (kind == "int" and isinstance(v, bool)):
                raise ConfigError(f"{key}: expected {kind}, got {v!r}")
            if choices is not None and v not in choices:
                raise ConfigError(f"{key}: {v!r} not in {choices}")
        if self.values["replicas"] < 1:
            raise ConfigError("replicas: must be >= 1")
        if not self.values["plan.gamma"]:
            raise ConfigError("plan.gamma: at least one value required")
        if self.values["plan.N"] and len(self.values["plan.N"]) != len(self.values["plan.gamma"]):
            raise ConfigError("plan.N: needs one entry per plan.gamma")
        times = self.values["schedule.times"]
        if any(b < a for a, b in zip(times, times[1:])) or any(t < 0 for t in times):
            raise ConfigError("schedule.times: must be sorted and nonnegative")
        if self.values["spde.dt"] <= 0:
            raise ConfigError("spde.dt: must be positive")

    def to_text(self) -> str:
        lines = []
        for key in sorted(SCHEMA):
            lines.append(f"{key} = {_format(SCHEMA[key][0], self.values[key])}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "ExperimentConfig":
        vals = {}
        for lineno, line in enumerate(text.splitlines(), 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"line {lineno}: expected 'key = value'")
            key, raw = (s.strip() for s in line.split("=", 1))
            if key not in SCHEMA:
                raise ConfigError(f"{key}: unknown key (line {lineno})")
            vals[key] = _parse(SCHEMA[key][0], raw, key)
        return cls(vals)

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        return cls.from_text(Path(path).read_text())

    def save(self, path) -> None:
        Path(path).write_text(self.to_text())

    def apply_overrides(self, pairs) -> "ExperimentConfig":
        vals = dict(self.values)
        for pair in pairs:
            if "=" not in pair:
                raise ConfigError(f"override {pair!r}: expected key=value")
            key, raw = (s.strip() for s in pair.split("=", 1))
            if key not in SCHEMA:
                raise ConfigError(f"{key}: unknown key")
            vals[key] = _parse(SCHEMA[key][0], raw, key)
        return ExperimentConfig(vals)

    def hash(self) -> str:
        return hashlib.sha256(self.to_text().encode()).hexdigest()

    def worker_count(self) -> int:
        env = os.environ.get("KACKAWASAKI_WORKERS")
        return max(1, int(env)) if env else max(1, int(self.values["workers"]))


def schema_text() -> str:
    rows = ["key | type | default | description", "--- | --- | --- | ---"]
    for key in sorted(SCHEMA):
        kind, default, desc, choices = SCHEMA[key]
        extra = f" (one of: {', '.join(choices)})" if choices else ""
        rows.append(f"{key} | {kind} | {_format(kind, default)} | {desc}{extra}")
    return "\n".join(rows) + "\n"
