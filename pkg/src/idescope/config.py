"""Experiment configuration: TOML or JSON, validated against one schema."""
from __future__ import annotations

import hashlib
import json
import os

import jsonschema

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .util import dumps

TASKS = ("simulate", "pullback", "forward", "omega", "verify")
SAMPLING_TASKS = ("pullback", "forward", "omega", "verify")
CHECKS = ("process_property", "periodicity", "dissipativity", "gronwall", "smallness", "fixed_point")

_pos = {"type": "number", "exclusiveMinimum": 0}
_int_list = {"type": "array", "items": {"type": "integer"}, "minItems": 1}
_descriptor = {"type": "object", "required": ["kind"],
               "properties": {"kind": {"enum": ["interval", "box", "ball", "segment", "random", "points"]}}}

SCHEMA = {
    "type": "object",
    "required": ["model", "task"],
    "additionalProperties": False,
    "properties": {
        "seed": {"type": "integer", "minimum": 0, "maximum": 2**64 - 1},
        "model": {
            "type": "object",
            "required": ["name"],
            "additionalProperties": False,
            "properties": {"name": {"type": "string"}, "params": {"type": "object"}},
        },
        "quadrature": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"n": {"type": "integer", "minimum": 2},
                           "rule": {"enum": ["midpoint", "trapezoid", "gauss_legendre"]},
                           "kink": {"enum": ["subtract", "plain"]}},
        },
        "task": {
            "type": "object",
            "required": ["kind"],
            "additionalProperties": False,
            "properties": {
                "kind": {"enum": list(TASKS)},
                "tau": {"type": "integer"},
                "horizon": {"type": "integer", "minimum": 0},
                "u0": {"type": ["number", "array"]},
                "s_grid": _int_list,
                "tol": _pos,
                "resolution": _pos,
                "mode": {"enum": ["limsup", "nested"]},
                "source": _descriptor,
                "tau_range": {"type": "array", "items": {"type": "integer"}, "minItems": 2, "maxItems": 3},
                "attractor_range": {"type": "array", "items": {"type": "integer"}, "minItems": 2, "maxItems": 2},
                "attractor_s_max": {"type": "integer", "minimum": 1},
                "tail": {"type": "array", "items": {"type": "integer"}, "minItems": 2, "maxItems": 2},
                "attraction_tau": {"type": "integer"},
                "attraction_step": {"type": "integer", "minimum": 1},
                "check": {"enum": list(CHECKS)},
                "samples": {"type": "integer", "minimum": 1},
                "theta": {"type": "integer", "minimum": 1},
                "time_window": {"type": "array", "items": {"type": "integer"}, "minItems": 2, "maxItems": 2},
                "max_iter": {"type": "integer", "minimum": 1},
            },
        },
        "output": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"dir": {"type": "string"}, "include_points": {"type": "boolean"}},
        },
    },
    "allOf": [{
        "if": {"properties": {"task": {"properties": {"kind": {"enum": list(SAMPLING_TASKS)}}}}},
        "then": {"required": ["seed"]},
    }],
}


class ConfigError(ValueError):
    """Unreadable or schema-invalid configuration."""


def load_config(path) -> dict:
    with open(path, "rb") as fh:
        raw = fh.read()
    try:
        if str(path).endswith(".json"):
            cfg = json.loads(raw.decode())
        else:
            cfg = tomllib.loads(raw.decode())
    except (ValueError, UnicodeDecodeError) as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from exc
    validate_config(cfg)
    base = os.path.dirname(os.path.abspath(path))
    out = cfg.setdefault("output", {})
    out["dir"] = os.path.join(base, out.get("dir", "out"))
    return cfg


def validate_config(cfg: dict) -> None:
    try:
        jsonschema.validate(cfg, SCHEMA)
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigError(f"config invalid at {where}: {exc.message}") from exc


def config_hash(cfg: dict) -> str:
    """sha256 of the canonical serialisation, ignoring the output location."""
    clean = {k: v for k, v in cfg.items() if k != "output"}
    return hashlib.sha256(dumps(clean).encode()).hexdigest()
