"""Flat dotted-key experiment configuration.

A config is a YAML mapping whose keys are dotted paths (``model.eps``) and
whose values are scalars or lists.  Nested mappings are flattened on load, so
``model: {eps: 0.1}`` is accepted too.  Every key must appear in ``SCHEMA``;
``schema_version`` and ``kind`` are required, everything else has a default.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Callable

import yaml

SCHEMA_VERSION = 1

KINDS = (
    "simulate",
    "stationary",
    "verify-generator",
    "verify-martingale",
    "verify-kernels",
    "spde",
    "converge",
    "periodic-converge",
)


class ConfigError(ValueError):
    def __init__(self, key: str, message: str):
        super().__init__(f"{key}: {message}")
        self.key = key


class SchemaError(ConfigError):
    pass


class RangeError(ConfigError):
    def __init__(self, key: str, value, message: str):
        super().__init__(key, f"{message} (got {value!r})")
        self.value = value


class ConfigErrors(ValueError):
    """Every problem found in one document."""

    def __init__(self, errors: list[ConfigError]):
        super().__init__("; ".join(str(e) for e in errors))
        self.errors = errors


def _pos(v):
    return v > 0


def _nonneg(v):
    return v >= 0


@dataclass(frozen=True)
class Key:
    type: type | tuple
    default: Any
    check: Callable | None = None
    why: str = ""
    is_list: bool = False


NUM = (int, float)

SCHEMA: dict[str, Key] = {
    "schema_version": Key(int, None),
    "kind": Key(str, None, lambda v: v in KINDS, f"one of {', '.join(KINDS)}"),
    "out": Key(str, "out"),
    "seed": Key(int, 0, _nonneg, "nonnegative"),
    "threads": Key(int, 0, _nonneg, "nonnegative (0 = all cores)"),
    # model
    "model.eps": Key(NUM, 0.1, lambda v: 0 < v <= 1, "in (0, 1]"),
    "model.alpha": Key(NUM, 1.0, _pos, "positive"),
    "model.rate": Key(str, "identity", lambda v: v in ("identity", "cosine"), "identity or cosine"),
    "model.rate_amplitude": Key(NUM, 0.5, lambda v: 0 <= v < 1, "in [0, 1)"),
    # domain
    "domain.kind": Key(str, "line", lambda v: v in ("line", "ring"), "line or ring"),
    "domain.x_min": Key(int, -128),
    "domain.x_max": Key(int, 127),
    "domain.period": Key(int, 64, lambda v: v >= 2, "at least 2"),
    "domain.winding": Key(int, 0),
    "domain.initial": Key(str, "flat", lambda v: v in ("flat", "wedge", "max_slope", "stationary"), "flat, wedge, max_slope or stationary"),
    # run
    "run.t_end": Key(NUM, 10.0, _nonneg, "nonnegative"),
    "run.n_samples": Key(int, 11, lambda v: v >= 1, "at least 1"),
    "run.ensemble": Key(int, 100, lambda v: v >= 1, "at least 1"),
    "run.record_events": Key(bool, False),
    "run.sites": Key(int, [-20, -10, 0, 10, 20], is_list=True),
    "run.eps_list": Key(NUM, [0.2, 0.1, 0.05], lambda v: 0 < v <= 1, "entries in (0, 1]", is_list=True),
    "run.periods": Key(int, [64, 128], lambda v: v >= 2, "entries at least 2", is_list=True),
    # macroscopic grid
    "grid.T": Key(NUM, 0.5, _nonneg, "nonnegative"),
    "grid.X": Key(NUM, [-1.0, 0.0, 1.0], is_list=True),
    "grid.T_list": Key(NUM, [1.0, 3.0, 10.0, 30.0, 100.0, 300.0, 1000.0], _pos, "positive", is_list=True),
    # spde
    "spde.A": Key(NUM, -0.25),
    "spde.B": Key(NUM, 1.0, _nonneg, "nonnegative"),
    "spde.n_modes": Key(int, 16, lambda v: v >= 1, "at least 1"),
    "spde.dt": Key(NUM, 0.01, _pos, "positive"),
    "spde.T_end": Key(NUM, 1.0, _pos, "positive"),
    "spde.noise_sigma": Key(NUM, 2.0**0.5, _pos, "positive"),
    # per-experiment knobs
    "stationary.n_chi2": Key(int, 100000, lambda v: v >= 100, "at least 100"),
    "stationary.n_ks": Key(int, 10000, lambda v: v >= 50, "at least 50"),
    "stationary.T_dyn": Key(NUM, 0.1, _pos, "positive"),
    "stationary.var_eps": Key(NUM, 1e-3, lambda v: 0 < v <= 1, "in (0, 1]"),
    "generator.eps_list": Key(NUM, [1.0, 0.1, 0.01], lambda v: 0 < v <= 1, "entries in (0, 1]", is_list=True),
    "generator.s_max": Key(int, 20, _pos, "positive"),
    "lemma.eps_list": Key(NUM, [0.1, 0.05, 0.01], lambda v: 0 < v <= 1, "entries in (0, 1]", is_list=True),
    "lemma.shat_max": Key(NUM, 5.0, _pos, "positive"),
    "martingale.n_checkpoints": Key(int, 10, lambda v: v >= 1, "at least 1"),
    "kernels.times": Key(NUM, [0.5, 5.0, 50.0], _pos, "positive", is_list=True),
    "duhamel.n_seeds": Key(int, 20, lambda v: v >= 1, "at least 1"),
    "duhamel.t": Key(NUM, 20.0, _pos, "positive"),
    "duhamel.half_width": Key(int, 64, lambda v: v >= 4, "at least 4"),
    "duhamel.n_targets": Key(int, 20, lambda v: v >= 0, "nonnegative"),
    "spde.mp_ensemble": Key(int, 2000, lambda v: v >= 50, "at least 50"),
    "spde.chain_ensemble": Key(int, 3000, lambda v: v >= 50, "at least 50"),
    "spde.half_length": Key(NUM, 8.0, _pos, "positive"),
    "spde.dx": Key(NUM, 1 / 32, _pos, "positive"),
    # tolerances
    "tol.generator": Key(NUM, 1e-10, _pos, "positive"),
    "tol.duhamel": Key(NUM, 1e-6, _pos, "positive"),
    "tol.kernel_ode": Key(NUM, 1e-8, _pos, "positive"),
    "tol.mass": Key(NUM, 1e-10, _pos, "positive"),
    "tol.ks_alpha": Key(NUM, 0.01, lambda v: 0 < v < 1, "in (0, 1)"),
    "tol.ks_distance": Key(NUM, 0.05, _pos, "positive"),
    "tol.var": Key(NUM, 0.01, _pos, "positive"),
    "tol.slope": Key(NUM, 0.1, _pos, "positive"),
    "tol.stability": Key(NUM, 2.0, lambda v: v >= 1, "at least 1"),
    "tol.n_se": Key(NUM, 3.0, _pos, "positive"),
}


def defaults() -> dict:
    return {k: v.default for k, v in SCHEMA.items() if v.default is not None}


@dataclass
class ExperimentConfig:
    kind: str
    values: dict = field(default_factory=dict)

    def __getitem__(self, key: str):
        return self.values[key]

    def get(self, key: str, default=None):
        return self.values.get(key, default)

    def replace(self, **updates) -> "ExperimentConfig":
        vals = dict(self.values)
        for k, v in updates.items():
            vals[k.replace("__", ".")] = v
        return validate(vals)

    def echo(self) -> dict:
        return dict(sorted(self.values.items()))

    def to_yaml(self) -> str:
        return yaml.safe_dump(self.echo(), sort_keys=True)


def _flatten(doc, prefix="") -> dict:
    out = {}
    for k, v in doc.items():
        key = f"{prefix}{k}"
        if isinstance(v, dict):
            out.update(_flatten(v, key + "."))
        else:
            out[key] = v
    return out


def _typed(key: str, spec: Key, value, errors: list):
    def one(v):
        if isinstance(v, bool) and spec.type is not bool:
            errors.append(SchemaError(key, f"expected {_tname(spec.type)}, got a boolean"))
            return None
        if spec.type is NUM and isinstance(v, int):
            return float(v)
        if spec.type is NUM and isinstance(v, str):
            # YAML 1.1 reads "1e-3" as a string
            try:
                return float(v)
            except ValueError:
                pass
        if not isinstance(v, spec.type):
            errors.append(SchemaError(key, f"expected {_tname(spec.type)}, got {type(v).__name__}"))
            return None
        return v

    if spec.is_list:
        if not isinstance(value, list):
            errors.append(SchemaError(key, "expected a list"))
            return None
        vals = [one(v) for v in value]
        if any(v is None for v in vals):
            return None
        if spec.check is not None:
            bad = [v for v in vals if not spec.check(v)]
            if bad:
                errors.append(RangeError(key, bad, spec.why))
                return None
        return vals
    v = one(value)
    if v is not None and spec.check is not None and not spec.check(v):
        errors.append(RangeError(key, v, spec.why))
        return None
    return v


def _tname(t) -> str:
    return "number" if t is NUM else t.__name__


def validate(raw: dict) -> ExperimentConfig:
    """Check every key and cross-field rule; raise ``ConfigErrors`` listing all problems."""
    errors: list[ConfigError] = []
    vals = defaults()
    for key in ("schema_version", "kind"):
        if key not in raw:
            errors.append(SchemaError(key, "required key missing"))
    for key, value in raw.items():
        spec = SCHEMA.get(key)
        if spec is None:
            errors.append(SchemaError(key, "unknown key"))
            continue
        v = _typed(key, spec, value, errors)
        if v is not None:
            vals[key] = v
    if "schema_version" in raw and raw["schema_version"] != SCHEMA_VERSION and vals.get("schema_version") is not None:
        errors.append(SchemaError("schema_version", f"unsupported version {raw['schema_version']!r}, expected {SCHEMA_VERSION}"))

    # cross-field rules, mirroring the module preconditions
    if vals.get("domain.kind") == "ring":
        n, chi = vals["domain.period"], vals["domain.winding"]
        if abs(chi) > n:
            errors.append(RangeError("domain.winding", chi, "|winding| must not exceed the period"))
        elif (chi - n) % 2:
            errors.append(SchemaError("domain.winding", f"winding must satisfy chi = N mod 2 (N={n}, chi={chi})"))
        if vals.get("domain.initial") == "stationary":
            errors.append(SchemaError("domain.initial", "stationary initial data needs domain.kind = line"))
    elif vals["domain.x_max"] <= vals["domain.x_min"]:
        errors.append(RangeError("domain.x_max", vals["domain.x_max"], "must exceed domain.x_min"))
    if vals.get("spde.A", 0) > 0:
        errors.append(RangeError("spde.A", vals["spde.A"], "must be <= 0"))
    if vals.get("spde.dt", 1) > vals.get("spde.T_end", 1):
        errors.append(RangeError("spde.dt", vals["spde.dt"], "must not exceed spde.T_end"))
    if errors:
        raise ConfigErrors(errors)
    return ExperimentConfig(vals["kind"], vals)


def parse_config(text: str) -> ExperimentConfig:
    try:
        doc = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigErrors([SchemaError("<document>", f"not valid YAML: {exc}")]) from exc
    if doc is None:
        doc = {}
    if not isinstance(doc, dict):
        raise ConfigErrors([SchemaError("<document>", "top level must be a mapping")])
    return validate(_flatten(doc))


def load_config(path) -> ExperimentConfig:
    with open(path) as fh:
        return parse_config(fh.read())
