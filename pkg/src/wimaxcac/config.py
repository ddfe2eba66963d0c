"""JSON configuration: defaults, schema validation and conversion to SystemConfig.

Units are carried in key names (``_per_min``, ``_ms``, ``_db``).  Errors are
reported as ``ConfigError`` with the dotted path of the offending key.
"""

from __future__ import annotations

import copy
import json
import math
from pathlib import Path

import jsonschema

from .chain import SolverOptions, SystemConfig
from .channel import ChannelParams, RateEntry
from .mmpp import MmppParams
from .policy import POLICY_NAMES, QueueAware, Threshold, Unrestricted

DEFAULTS = {
    "channel": {"nakagami_m": 1.0},
    "policy": {"alpha": None},
    "solver": {"method": "auto", "tolerance": 1e-10, "max_sweeps": 500, "memory_budget_mb": 512},
}

_num = {"type": "number"}
_nonneg = {"type": "number", "minimum": 0}
_pos = {"type": "number", "exclusiveMinimum": 0}

SCHEMA = {
    "type": "object",
    "required": ["mmpp", "channel", "queue", "connections", "policy", "frame_ms"],
    "properties": {
        "description": {"type": "string"},
        "notes": {},
        "mmpp": {
            "type": "object",
            "required": ["generator_per_min", "arrival_rates_per_frame"],
            "properties": {
                "generator_per_min": {"type": "array", "minItems": 1,
                                      "items": {"type": "array", "items": _num}},
                "arrival_rates_per_frame": {"type": "array", "minItems": 1, "items": _nonneg},
            },
        },
        "channel": {
            "type": "object",
            "required": ["subchannels", "avg_snr_db", "rate_table"],
            "properties": {
                "subchannels": {"type": "integer", "minimum": 1},
                "avg_snr_db": _num,
                "nakagami_m": {"type": "number", "minimum": 0.5},
                "rate_table": {
                    "type": "array", "minItems": 1,
                    "items": {
                        "type": "object",
                        "required": ["snr_db", "packets_per_frame"],
                        "properties": {
                            "snr_db": {"type": ["number", "null"]},
                            "packets_per_frame": {"type": "integer", "minimum": 0},
                        },
                    },
                },
            },
        },
        "queue": {
            "type": "object",
            "required": ["capacity", "max_batch"],
            "properties": {
                "capacity": {"type": "integer", "minimum": 1},
                "max_batch": {"type": "integer", "minimum": 1},
            },
        },
        "connections": {
            "type": "object",
            "required": ["arrival_rate_per_min", "mean_duration_min"],
            "properties": {"arrival_rate_per_min": _nonneg, "mean_duration_min": _pos},
        },
        "policy": {
            "type": "object",
            "required": ["name"],
            "properties": {
                "name": {"enum": list(POLICY_NAMES)},
                "c_max": {"type": "integer", "minimum": 0},
                "b_th": {"type": "integer", "minimum": 0},
                "c_trunc": {"type": "integer", "minimum": 0},
                "alpha": {"type": ["array", "null"], "items": {"type": "number", "minimum": 0, "maximum": 1}},
            },
        },
        "frame_ms": _pos,
        "solver": {
            "type": "object",
            "properties": {
                "method": {"enum": ["auto", "direct", "gauss_seidel", "power", "iad"]},
                "tolerance": _nonneg,
                "max_sweeps": {"type": "integer", "minimum": 1},
                "memory_budget_mb": _pos,
            },
        },
    },
}

_POLICY_KEYS = {"threshold": ("c_max",), "queue_aware": ("b_th", "c_trunc"), "unrestricted": ("c_trunc",)}


class ConfigError(ValueError):
    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}" if path else message)
        self.path = path


def _merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def effective(raw: dict) -> dict:
    """User document with defaults filled in, after schema validation."""
    if not isinstance(raw, dict):
        raise ConfigError("", "configuration must be a JSON object")
    doc = _merge(DEFAULTS, raw)
    validator = jsonschema.Draft7Validator(SCHEMA)
    errors = sorted(validator.iter_errors(doc), key=lambda e: list(e.absolute_path))
    if errors:
        err = errors[0]
        path = ".".join(str(p) for p in err.absolute_path)
        if err.validator == "required":
            missing = err.message.split("'")[1]
            path = f"{path}.{missing}" if path else missing
        raise ConfigError(path, err.message)
    pol = doc["policy"]
    for key in _POLICY_KEYS[pol["name"]]:
        if key not in pol:
            raise ConfigError(f"policy.{key}", f"required for policy {pol['name']!r}")
    return doc


def build(doc: dict) -> SystemConfig:
    doc = effective(doc)
    m = doc["mmpp"]
    try:
        mmpp = MmppParams.from_offdiagonal(m["generator_per_min"], m["arrival_rates_per_frame"])
    except ValueError as exc:
        raise ConfigError("mmpp", str(exc)) from exc

    ch = doc["channel"]
    table = [RateEntry(-math.inf if e["snr_db"] is None else float(e["snr_db"]), int(e["packets_per_frame"]))
             for e in ch["rate_table"]]
    try:
        channel = ChannelParams(ch["subchannels"], float(ch["avg_snr_db"]), tuple(table),
                                float(ch["nakagami_m"]))
    except ValueError as exc:
        raise ConfigError("channel.rate_table", str(exc)) from exc

    X = doc["queue"]["capacity"]
    pol = doc["policy"]
    if pol["name"] == "threshold":
        policy = Threshold(pol["c_max"])
    elif pol["name"] == "queue_aware":
        if pol["b_th"] > X + 1:
            raise ConfigError("policy.b_th", f"must be <= queue.capacity + 1 ({X + 1})")
        alpha = pol.get("alpha")
        if alpha is not None and len(alpha) != X + 1:
            raise ConfigError("policy.alpha", f"needs queue.capacity + 1 = {X + 1} entries")
        policy = QueueAware(pol["b_th"], pol["c_trunc"], None if alpha is None else tuple(alpha))
    else:
        policy = Unrestricted(pol["c_trunc"])

    s = doc["solver"]
    return SystemConfig(
        mmpp=mmpp,
        channel=channel,
        policy=policy,
        queue_capacity=X,
        max_batch=doc["queue"]["max_batch"],
        conn_arrival_rate=float(doc["connections"]["arrival_rate_per_min"]),
        conn_mean_duration=float(doc["connections"]["mean_duration_min"]),
        frame_duration_ms=float(doc["frame_ms"]),
        solver=SolverOptions(s["method"], float(s["tolerance"]), int(s["max_sweeps"]),
                             float(s["memory_budget_mb"])),
    )


def load_document(path) -> dict:
    try:
        with open(path) as fh:
            raw = json.load(fh)
    except OSError as exc:
        raise ConfigError("", f"cannot read {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError("", f"{path} is not valid JSON: {exc}") from exc
    return effective(raw)


def load(path) -> SystemConfig:
    return build(load_document(path))


def dump(doc: dict, path) -> None:
    Path(path).write_text(json.dumps(effective(doc), indent=2) + "\n")


def set_path(doc: dict, dotted: str, value) -> dict:
    """Copy of ``doc`` with the dotted key replaced."""
    out = copy.deepcopy(doc)
    node = out
    keys = dotted.split(".")
    for k in keys[:-1]:
        if not isinstance(node, dict) or k not in node:
            raise ConfigError(dotted, "no such key")
        node = node[k]
    if not isinstance(node, dict) or keys[-1] not in node:
        raise ConfigError(dotted, "no such key")
    old = node[keys[-1]]
    if isinstance(old, bool) or not isinstance(old, (int, float)):
        raise ConfigError(dotted, "only numeric keys can be swept")
    value = float(value)
    node[keys[-1]] = int(value) if isinstance(old, int) and value.is_integer() else value
    return out
