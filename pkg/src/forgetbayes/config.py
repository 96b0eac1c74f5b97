"""Benchmark run configuration: defaults, schema and validation.

Configs are JSON objects.  Unknown keys are rejected, and every error message
names the offending location, e.g. ``config.environments[0].segments[1].probs``.
"""

from __future__ import annotations

import copy
import json
from pathlib import Path
from typing import Any

from jsonschema import Draft202012Validator

from .environments import SegmentSpec

__all__ = [
    "ConfigError",
    "DEFAULT_CONFIG",
    "default_config",
    "validate_config",
    "validate_environment",
    "load_config",
    "merge",
]


class ConfigError(ValueError):
    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}")
        self.path = path


DEFAULT_CONFIG: dict[str, Any] = {
    "seed": 0,
    "trials": 20,
    "environments": [
        {
            "name": "drift-die",
            "kind": "biased-die",
            "segments": [
                {"duration": 500, "probs": [0.9, 0.1]},
                {"duration": 500, "probs": [0.1, 0.9]},
            ],
        },
        {
            "name": "stationary-die",
            "kind": "biased-die",
            "segments": [{"duration": 1000, "probs": [0.3, 0.2, 0.2, 0.1, 0.1, 0.1]}],
        },
        {
            "name": "drift-gaussian",
            "kind": "shifting-gaussian",
            "obs_variance": 1.0,
            "random_walk": {"drift_variance": 0.01, "length": 1000, "mu0": 0.0},
        },
        {
            "name": "recall",
            "kind": "recall",
            "vocab_size": 20,
            "length": 2000,
            "probe_fraction": 0.2,
            "delay_distribution": "uniform",
        },
    ],
    "prior": {"dirichlet_alpha": 1.0, "gaussian_mean": 0.0, "gaussian_variance": 100.0},
    "policies": {"window": {"k": 50}, "pmp": {"lambda": 0.05, "k": 50}},
    "calibration": {"tol": 1e-4, "floor": 1e-3},
}

_POS_INT = {"type": "integer", "minimum": 1}
_NUMBER = {"type": "number"}

_SEGMENT_DIE = {
    "type": "object",
    "additionalProperties": False,
    "required": ["duration", "probs"],
    "properties": {"duration": _POS_INT, "probs": {"type": "array", "items": _NUMBER, "minItems": 2}},
}
_SEGMENT_MEAN = {
    "type": "object",
    "additionalProperties": False,
    "required": ["duration", "mean"],
    "properties": {"duration": _POS_INT, "mean": _NUMBER},
}

_ENV_SCHEMAS = {
    "biased-die": {
        "type": "object",
        "additionalProperties": False,
        "required": ["name", "kind", "segments"],
        "properties": {
            "name": {"type": "string"},
            "kind": {"const": "biased-die"},
            "segments": {"type": "array", "items": _SEGMENT_DIE, "minItems": 1},
        },
    },
    "shifting-gaussian": {
        "type": "object",
        "additionalProperties": False,
        "required": ["name", "kind", "obs_variance"],
        "properties": {
            "name": {"type": "string"},
            "kind": {"const": "shifting-gaussian"},
            "obs_variance": {"type": "number", "exclusiveMinimum": 0},
            "segments": {"type": "array", "items": _SEGMENT_MEAN, "minItems": 1},
            "random_walk": {
                "type": "object",
                "additionalProperties": False,
                "required": ["drift_variance", "length"],
                "properties": {
                    "drift_variance": {"type": "number", "minimum": 0},
                    "length": _POS_INT,
                    "mu0": _NUMBER,
                },
            },
        },
        "oneOf": [{"required": ["segments"]}, {"required": ["random_walk"]}],
    },
    "recall": {
        "type": "object",
        "additionalProperties": False,
        "required": ["name", "kind", "vocab_size", "length", "probe_fraction"],
        "properties": {
            "name": {"type": "string"},
            "kind": {"const": "recall"},
            "vocab_size": {"type": "integer", "minimum": 2},
            "length": _POS_INT,
            "probe_fraction": {"type": "number", "minimum": 0, "exclusiveMaximum": 1},
            "delay_distribution": {"type": "string"},
        },
    },
}

_TOP_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "seed": {"type": "integer", "minimum": 0},
        "trials": _POS_INT,
        "environments": {
            "type": "array",
            "minItems": 1,
            "items": {
                "type": "object",
                "required": ["kind"],
                "properties": {"kind": {"enum": sorted(_ENV_SCHEMAS)}},
            },
        },
        "prior": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "dirichlet_alpha": {"type": "number", "exclusiveMinimum": 0},
                "gaussian_mean": _NUMBER,
                "gaussian_variance": {"type": "number", "exclusiveMinimum": 0},
            },
        },
        "policies": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "window": {
                    "type": "object",
                    "additionalProperties": False,
                    "required": ["k"],
                    "properties": {"k": _POS_INT},
                },
                "pmp": {
                    "type": "object",
                    "additionalProperties": False,
                    "required": ["lambda", "k"],
                    "properties": {"lambda": {"type": "number", "minimum": 0}, "k": _POS_INT},
                },
            },
        },
        "calibration": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "tol": {"type": "number", "exclusiveMinimum": 0},
                "floor": {"type": "number", "minimum": 1e-6, "exclusiveMaximum": 0.05},
            },
        },
    },
}


def _fmt_path(prefix: str, parts) -> str:
    out = prefix
    for p in parts:
        out += f"[{p}]" if isinstance(p, int) else f".{p}"
    return out


def _check(schema: dict, instance: Any, prefix: str) -> None:
    errors = sorted(Draft202012Validator(schema).iter_errors(instance), key=lambda e: list(map(str, e.path)))
    if errors:
        err = errors[0]
        raise ConfigError(_fmt_path(prefix, err.absolute_path), err.message)


def merge(base: dict, override: dict) -> dict:
    """Recursive dict merge; lists and scalars in ``override`` replace ``base``."""
    out = copy.deepcopy(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = merge(out[key], value)
        else:
            out[key] = copy.deepcopy(value)
    return out


def default_config() -> dict:
    return copy.deepcopy(DEFAULT_CONFIG)


def validate_config(raw: dict) -> dict:
    """Check ``raw`` and return it merged over the defaults."""
    _check(_TOP_SCHEMA, raw, "config")
    cfg = merge(DEFAULT_CONFIG, raw)
    names = set()
    for i, env in enumerate(cfg["environments"]):
        where = f"config.environments[{i}]"
        validate_environment(env, where)
        if env["name"] in names:
            raise ConfigError(f"{where}.name", f"duplicate environment name {env['name']!r}")
        names.add(env["name"])
    return cfg


def validate_environment(env: dict, where: str = "environment") -> dict:
    """Check one environment block (schema plus segment semantics)."""
    if not isinstance(env, dict) or env.get("kind") not in _ENV_SCHEMAS:
        raise ConfigError(f"{where}.kind", f"must be one of {sorted(_ENV_SCHEMAS)}")
    _check(_ENV_SCHEMAS[env["kind"]], env, where)
    for j, seg in enumerate(env.get("segments", [])):
        try:
            SegmentSpec(seg["duration"], probs=seg.get("probs"), mean=seg.get("mean"))
        except ValueError as exc:
            raise ConfigError(f"{where}.segments[{j}]", str(exc)) from None
    if env["kind"] == "biased-die":
        k = len(env["segments"][0]["probs"])
        for j, seg in enumerate(env["segments"]):
            if len(seg["probs"]) != k:
                raise ConfigError(f"{where}.segments[{j}].probs", f"has {len(seg['probs'])} faces, expected {k}")
    if env["kind"] == "recall":
        dist = env.get("delay_distribution", "uniform")
        if dist != "uniform" and not dist.startswith("geometric:"):
            raise ConfigError(f"{where}.delay_distribution", f"unknown delay distribution {dist!r}")
    return env


def load_config(path: str | Path) -> dict:
    """Read a JSON config file; raises ``ConfigError`` for malformed JSON."""
    text = Path(path).read_text(encoding="utf-8")
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(str(path), f"invalid JSON ({exc.msg} at line {exc.lineno})") from None
    if not isinstance(raw, dict):
        raise ConfigError("config", "top level must be a JSON object")
    return raw
