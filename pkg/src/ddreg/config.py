"""Run configuration: a versioned JSON document validated before any compute.

Every section has fixed keys; unknown keys are rejected and missing ones
take their defaults, so ``serialize(parse(text))`` is a canonical form.
Randomness is drawn from named streams derived from the single seed.
"""
from __future__ import annotations

import copy
import json
import zlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .expr import ExpressionError, parse as parse_expression
from .fields import UsageError
from .functionals import CATALOG

SCHEMA_VERSION = 1

_NUM = (int, float)
_OPT_NUM = (int, float, type(None))
_OPT_STR = (str, type(None))

# section -> key -> (accepted types, default)
SCHEMA = {
    "functional": {"name": (str, "hamstat"), "params": (dict, {})},
    "grid": {"n": (int, 2), "m": (int, 65)},
    "sampler": {"mode": (str, "operator_ball"), "radius": (_NUM, 0.5), "count": (int, 500),
                "matrices": (list, [])},
    "radii": {"R": (_NUM, 0.4), "levels": (int, 4), "values": ((list, type(None)), None)},
    "tolerances": {"solve": (_NUM, 1e-10), "energy_exponent": (_NUM, 0.3),
                   "oscillation_exponent": (_NUM, 0.5), "holder_change": (_NUM, 0.2),
                   "legendre_threshold": (_NUM, 0.0), "zero": (_NUM, 1e-6)},
    "cc": {"region_radius": (_NUM, 0.8), "freeze_at": ((list, type(None)), None),
           "method": (str, "auto")},
    "var": {"method": (str, "gd"), "max_iter": (int, 500), "precondition": (bool, True),
            "memory": (int, 8), "test_count": (int, 20), "certified_radius": (_OPT_NUM, None)},
    "diagnose": {"source": (str, "solve"), "field_path": (_OPT_STR, None), "alpha": (_NUM, 0.5),
                 "holder_radius": (_NUM, 0.25), "refine_levels": (int, 1),
                 "pair_budget": (int, 500_000), "probe_orders": (list, []),
                 "multi_index": (list, [0, 1]), "probe_levels": (int, 2),
                 "lemma_cases": (int, 0)},
    "lemma": {"cases": (int, 1000)},
}
TOP = {"schema_version": (int, SCHEMA_VERSION), "seed": (int, 0), "output": (_OPT_STR, None),
       "boundary": (str, "0"), "init": (_OPT_STR, None)}

CHOICES = {
    ("sampler", "mode"): ("frobenius_ball", "operator_ball", "explicit_list"),
    ("cc", "method"): ("auto", "cg", "direct"),
    ("var", "method"): ("gd", "lbfgs"),
    ("diagnose", "source"): ("solve", "boundary", "file"),
}


class ConfigError(UsageError):
    pass


def _check_type(where: str, value, types):
    if isinstance(value, bool) and bool not in (types if isinstance(types, tuple) else (types,)):
        raise ConfigError(f"{where}: expected {types}, got a boolean")
    if not isinstance(value, types):
        raise ConfigError(f"{where}: expected {types}, got {type(value).__name__}")


def _canonical(value):
    # ints where a float is accepted are stored as floats so round trips are stable
    return float(value) if isinstance(value, int) and not isinstance(value, bool) else value


@dataclass
class RunConfig:
    data: dict
    base_dir: Path = Path(".")

    @classmethod
    def from_dict(cls, raw: dict, base_dir: Path | str = ".") -> "RunConfig":
        if not isinstance(raw, dict):
            raise ConfigError("config must be a JSON object")
        unknown = set(raw) - set(TOP) - set(SCHEMA)
        if unknown:
            raise ConfigError(f"unknown top-level key(s): {sorted(unknown)}")
        out = {}
        for key, (types, default) in TOP.items():
            value = raw.get(key, default)
            _check_type(key, value, types)
            out[key] = value
        if out["schema_version"] != SCHEMA_VERSION:
            raise ConfigError(f"unsupported schema_version {out['schema_version']}")
        for section, keys in SCHEMA.items():
            given = raw.get(section, {})
            if not isinstance(given, dict):
                raise ConfigError(f"section {section!r} must be an object")
            extra = set(given) - set(keys)
            if extra:
                raise ConfigError(f"unknown key(s) in {section!r}: {sorted(extra)}")
            sec = {}
            for key, (types, default) in keys.items():
                value = given.get(key, copy.deepcopy(default))
                _check_type(f"{section}.{key}", value, types)
                choices = CHOICES.get((section, key))
                if choices and value not in choices:
                    raise ConfigError(f"{section}.{key} must be one of {choices}, got {value!r}")
                if types is _NUM or types is _OPT_NUM:
                    value = _canonical(value)
                sec[key] = value
            out[section] = sec
        cfg = cls(out, Path(base_dir))
        cfg.validate()
        return cfg

    def validate(self) -> None:
        d = self.data
        fn = d["functional"]
        if fn["name"] not in CATALOG:
            raise ConfigError(f"unknown functional {fn['name']!r}; known: {sorted(CATALOG)}")
        if fn["params"]:
            raise ConfigError(f"functional {fn['name']!r} takes no parameters")
        n, m = d["grid"]["n"], d["grid"]["m"]
        if n not in (1, 2, 3) or m < 9:
            raise ConfigError("grid needs n in {1, 2, 3} and m >= 9")
        if m % 2 == 0:
            raise ConfigError("grid.m must be odd so the origin is a node")
        for key in ("boundary", "init"):
            if d[key] is None:
                continue
            try:
                parse_expression(d[key]).check_dimension(n)
            except ExpressionError as exc:
                raise ConfigError(f"{key}: {exc}") from None
        if d["radii"]["values"] is not None:
            vals = d["radii"]["values"]
            if not vals or not all(isinstance(v, _NUM) and v > 0 for v in vals):
                raise ConfigError("radii.values must be a nonempty list of positive numbers")
        elif d["radii"]["R"] <= 0 or d["radii"]["levels"] < 1:
            raise ConfigError("radii need R > 0 and levels >= 1")
        for k in d["diagnose"]["probe_orders"]:
            if k not in (3, 4):
                raise ConfigError("diagnose.probe_orders entries must be 3 or 4")
        if any(not isinstance(p, int) or not 0 <= p < n for p in d["diagnose"]["multi_index"]):
            raise ConfigError(f"diagnose.multi_index entries must be axes in 0..{n - 1}")
        if not 0 < d["diagnose"]["alpha"] <= 1:
            raise ConfigError("diagnose.alpha must lie in (0, 1]")
        if d["diagnose"]["source"] == "file" and not d["diagnose"]["field_path"]:
            raise ConfigError("diagnose.source 'file' needs diagnose.field_path")
        if d["lemma"]["cases"] < 1 or d["diagnose"]["lemma_cases"] < 0:
            raise ConfigError("lemma case counts must be positive")
        if d["sampler"]["mode"] == "explicit_list" and not d["sampler"]["matrices"]:
            raise ConfigError("explicit_list sampler needs matrices")

    def __getitem__(self, key):
        return self.data[key]

    def to_dict(self) -> dict:
        return copy.deepcopy(self.data)

    def radii(self) -> list[float]:
        r = self.data["radii"]
        if r["values"] is not None:
            return sorted(float(v) for v in r["values"])
        return [r["R"] * 2.0 ** (-k) for k in range(r["levels"] - 1, -1, -1)]

    def resolve(self, path: str) -> Path:
        p = Path(path)
        return p if p.is_absolute() else self.base_dir / p


def parse_config(text: str, base_dir: Path | str = ".") -> RunConfig:
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON: {exc}") from None
    return RunConfig.from_dict(raw, base_dir)


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return parse_config(text, path.parent)


def serialize(cfg: RunConfig) -> str:
    return json.dumps(cfg.to_dict(), sort_keys=True, indent=2) + "\n"


def stream(seed: int, name: str) -> np.random.Generator:
    """Independent generator for a named consumer of the run seed.

    The stream name is hashed into the spawn key, so adding a new consumer
    never shifts the numbers drawn by existing ones.
    """
    ss = np.random.SeedSequence(seed, spawn_key=(zlib.crc32(name.encode()),))
    return np.random.default_rng(ss)
