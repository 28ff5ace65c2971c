"""Experiment configuration: JSON documents, schemas, and validation.

Each scenario owns a schema of typed, range-checked keys with defaults.
Validation reports *all* violations at once (unknown keys, wrong types,
out-of-range values, missing required keys), not just the first.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field


class ConfigError(ValueError):
    """Invalid configuration; ``violations`` lists every problem found."""

    def __init__(self, violations: list[str]):
        self.violations = list(violations)
        super().__init__("invalid configuration:\n  " + "\n  ".join(self.violations))


@dataclass(frozen=True)
class Key:
    """One schema entry: expected type, default, and admissible range."""

    type: type
    default: object = None
    lo: float | None = None
    hi: float | None = None
    required: bool = False

    def check(self, name: str, value) -> str | None:
        if self.type is float and isinstance(value, int) and not isinstance(value, bool):
            value = float(value)
        if not isinstance(value, self.type) or isinstance(value, bool):
            return f"key '{name}' expects {self.type.__name__}, got {value!r}"
        if self.lo is not None and value < self.lo:
            return f"key '{name}' = {value!r} below admissible minimum {self.lo}"
        if self.hi is not None and value > self.hi:
            return f"key '{name}' = {value!r} above admissible maximum {self.hi}"
        return None


_COMMON = {
    "seed": Key(int, default=12345),
    "output_dir": Key(str, default="out"),
}

SCENARIO_SCHEMAS: dict[str, dict[str, Key]] = {
    "linear_compare": {
        **_COMMON,
        "F": Key(float, default=-1.0),
        "f0": Key(float, default=0.0),
        "sigma": Key(float, default=1.0),
        "H": Key(float, default=1.0),
        "h0": Key(float, default=0.0),
        "prior_mean": Key(float, default=0.0),
        "prior_var": Key(float, default=1.0, lo=1e-12),
        "horizon": Key(float, default=1.0, lo=1e-6),
        "dt": Key(float, default=1e-3, lo=1e-9, hi=1.0),
        "n_particles": Key(int, default=10_000, lo=2),
        "n_grid": Key(int, default=801, lo=11),
        "x_lo": Key(float, default=-6.0),
        "x_hi": Key(float, default=6.0),
        "resample_threshold": Key(float, default=0.5, lo=0.0, hi=1.0),
    },
    "master_demo": {
        **_COMMON,
        "rates": Key(list, default=[[0, 1, 1.0], [1, 0, 3.0]]),
        "tau_a": Key(float, default=0.3, lo=0.0),
        "tau_b": Key(float, default=0.7, lo=0.0),
        "horizon": Key(float, default=1.0, lo=1e-6),
        "n_ode_steps": Key(int, default=10_000, lo=10),
    },
    "heston_demo": {
        **_COMMON,
        "kappa": Key(float, default=2.0, lo=0.0),
        "m": Key(float, default=0.04, lo=0.0),
        "gamma": Key(float, default=0.3, lo=0.0),
        "mu": Key(float, default=0.05),
        "x0": Key(float, default=0.04, lo=0.0),
        "s0": Key(float, default=100.0, lo=1e-12),
        "horizon": Key(float, default=1.0, lo=1e-6),
        "dt": Key(float, default=1e-5, lo=1e-9, hi=1.0),
        "filter_stride": Key(int, default=10, lo=1),
        "n_particles": Key(int, default=2000, lo=2),
        "window": Key(int, default=1000, lo=2),
        "strike": Key(float, default=100.0, lo=1e-12),
        "maturity": Key(float, default=2.0, lo=1e-6),
        "rate": Key(float, default=0.0),
        "inner_paths": Key(int, default=64, lo=2),
        "n_price_times": Key(int, default=8, lo=1),
    },
    "pricing_demo": {
        **_COMMON,
        "kappa": Key(float, default=1.0, lo=0.0),
        "m": Key(float, default=0.04, lo=0.0),
        "gamma": Key(float, default=0.3, lo=0.0),
        "mu": Key(float, default=0.0),
        "x0": Key(float, default=0.04, lo=0.0),
        "s0": Key(float, default=100.0, lo=1e-12),
        "strike": Key(float, default=100.0, lo=1e-12),
        "maturity": Key(float, default=1.0, lo=1e-6),
        "rate": Key(float, default=0.0),
        "n_particles": Key(int, default=500, lo=2),
        "inner_paths": Key(int, default=64, lo=2),
        "inner_dt": Key(float, default=5e-3, lo=1e-9),
    },
    "novikov_check": {
        **_COMMON,
        "horizon": Key(float, default=1.0, lo=1e-6),
        "dt": Key(float, default=0.01, lo=1e-9),
        "n_paths": Key(int, default=100_000, lo=100),
        "h_const": Key(float, default=1.0),
        "ou_theta": Key(float, default=1.0, lo=0.0),
    },
}


@dataclass(frozen=True)
class ExperimentConfig:
    scenario: str
    params: dict = field(default_factory=dict)

    @property
    def seed(self) -> int:
        return self.params["seed"]

    @property
    def output_dir(self) -> str:
        return self.params["output_dir"]

    def __getitem__(self, key: str):
        return self.params[key]

    def canonical_json(self) -> str:
        # output_dir is excluded: the hash identifies the numerical
        # configuration, not where its files land
        params = {k: v for k, v in self.params.items() if k != "output_dir"}
        return json.dumps({"scenario": self.scenario, **params}, sort_keys=True)

    def config_hash(self) -> str:
        return hashlib.sha256(self.canonical_json().encode()).hexdigest()


def validate_config(scenario: str, raw: dict, overrides: dict | None = None) -> ExperimentConfig:
    """Merge defaults < file values < overrides and range-check everything."""
    violations: list[str] = []
    if scenario not in SCENARIO_SCHEMAS:
        raise ConfigError(
            [f"unknown scenario '{scenario}'; choose from {sorted(SCENARIO_SCHEMAS)}"]
        )
    schema = SCENARIO_SCHEMAS[scenario]

    merged = {name: key.default for name, key in schema.items() if key.default is not None}
    for source in (raw, overrides or {}):
        for name, value in source.items():
            if name not in schema:
                violations.append(f"unknown key '{name}'")
            else:
                merged[name] = value

    for name, key in schema.items():
        if name not in merged:
            if key.required or key.default is None:
                violations.append(f"missing required key '{name}'")
            continue
        problem = key.check(name, merged[name])
        if problem:
            violations.append(problem)
        elif key.type is float:
            merged[name] = float(merged[name])

    if violations:
        raise ConfigError(violations)
    return ExperimentConfig(scenario=scenario, params=merged)


def parse_config(text: str, overrides: dict | None = None) -> ExperimentConfig:
    """Parse a JSON config document; the 'scenario' key selects the schema."""
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError([f"not valid JSON: {exc}"])
    if not isinstance(raw, dict):
        raise ConfigError(["top-level document must be a JSON object"])
    scenario = raw.pop("scenario", None)
    if scenario is None:
        raise ConfigError(["missing required key 'scenario'"])
    return validate_config(scenario, raw, overrides)
