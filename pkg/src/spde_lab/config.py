"""Loading scenario files, applying ``--set`` overrides, and hashing effective configs."""

from __future__ import annotations

import copy
import hashlib
import json
from pathlib import Path

from .errors import ConfigurationError
from .scenarios import BUILTINS, Scenario, builtin_config

__all__ = ["load_config", "parse_override", "apply_override", "effective_config", "scenario_hash"]


def parse_override(text: str):
    """Split ``key.path=value``; the value is parsed as JSON when possible."""
    if "=" not in text:
        raise ConfigurationError(f"override {text!r} must look like key=value")
    key, raw = text.split("=", 1)
    key = key.strip()
    if not key:
        raise ConfigurationError(f"override {text!r} has an empty key")
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return key.split("."), value


def apply_override(cfg: dict, path, value) -> None:
    node = cfg
    for i, part in enumerate(path[:-1]):
        if isinstance(node, list):
            node = node[_index(node, part, path)]
            continue
        if part not in node:
            node[part] = {}
        node = node[part]
        if not isinstance(node, (dict, list)):
            raise ConfigurationError(f"cannot override inside non-object {'.'.join(path[: i + 1])}")
    last = path[-1]
    if isinstance(node, list):
        node[_index(node, last, path)] = value
    else:
        node[last] = value


def _index(lst, part, path):
    try:
        i = int(part)
    except ValueError:
        raise ConfigurationError(f"{'.'.join(path)}: {part!r} is not a list index") from None
    if not -len(lst) <= i < len(lst):
        raise ConfigurationError(f"{'.'.join(path)}: index {i} out of range")
    return i


def _deep_merge(base: dict, top: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in top.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict) and k not in ("coefficients", "domain"):
            out[k] = _deep_merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def effective_config(raw: dict, overrides=()) -> dict:
    """Resolve a built-in reference, then apply overrides, returning the full dict.

    A file ``{"scenario": name, "parameters": {...}, ...}`` starts from the
    built-in template for those parameters; other keys replace template
    entries.  Overrides under ``parameters.`` regenerate the template.
    """
    if not isinstance(raw, dict):
        raise ConfigurationError("scenario config must be a JSON object")
    parsed = [parse_override(o) if isinstance(o, str) else o for o in overrides]
    name = raw.get("scenario")
    if name is not None and name in BUILTINS:
        params = dict(raw.get("parameters", {}))
        for path, value in parsed:
            if path[0] == "parameters" and len(path) == 2:
                params[path[1]] = value
        base = builtin_config(name, params)
        rest = {k: v for k, v in raw.items() if k != "parameters"}
        cfg = _deep_merge(base, rest)
        rest_over = [(p, v) for p, v in parsed if not (p[0] == "parameters" and len(p) == 2)]
    else:
        if name is not None and "domain" not in raw:
            raise ConfigurationError(f"unknown built-in scenario {name!r}; known: {sorted(BUILTINS)}")
        cfg = copy.deepcopy(raw)
        rest_over = parsed
    for path, value in rest_over:
        apply_override(cfg, path, value)
    return cfg


def load_config(path, overrides=()) -> tuple:
    """Read a JSON file (or a bare built-in name) and return ``(config dict, Scenario)``."""
    p = Path(path)
    if p.exists():
        try:
            raw = json.loads(p.read_text())
        except json.JSONDecodeError as exc:
            raise ConfigurationError(f"{path}: invalid JSON ({exc})") from None
    elif str(path) in BUILTINS:
        raw = {"scenario": str(path)}
    else:
        raise ConfigurationError(f"config file {path} not found")
    cfg = effective_config(raw, overrides)
    return cfg, Scenario.from_dict(cfg)


def scenario_hash(cfg: dict) -> str:
    blob = json.dumps(cfg, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(blob.encode()).hexdigest()
