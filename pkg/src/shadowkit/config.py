"""Experiment configuration.

A single YAML file holds per-command sections (shadow, imitate, eval, ...)
plus shared keys (seed, model, retarget_map).  Commands overlay their
defaults, then CLI `--set a.b.c=value` overrides, and hash the fully
resolved dictionary; the hash is embedded in every artifact a command
writes, so any output can be traced back to the exact settings that
produced it.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path

import yaml


class ConfigError(ValueError):
    pass


def config_hash(data) -> str:
    """16-hex digest of the canonical JSON form of a config mapping."""
    canon = json.dumps(data, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(canon.encode("utf-8")).hexdigest()[:16]


def deep_merge(base: dict, override: dict) -> dict:
    """Recursive dict merge; override wins, nested dicts merge key-wise."""
    out = dict(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = deep_merge(out[key], value)
        else:
            out[key] = value
    return out


def apply_override(data: dict, spec: str) -> dict:
    """Apply one `dotted.path=value` override; value parses as YAML."""
    path, sep, raw = spec.partition("=")
    if not sep or not path:
        raise ConfigError(f"override {spec!r} is not of the form key.path=value")
    try:
        value = yaml.safe_load(raw)
    except yaml.YAMLError:
        raise ConfigError(f"override {spec!r} has an unparseable value") from None
    if isinstance(value, str):
        # YAML leaves dotless scientific notation ("1e-3") as a string
        try:
            value = float(value)
        except ValueError:
            pass
    node = data
    keys = path.split(".")
    for key in keys[:-1]:
        nxt = node.get(key)
        if not isinstance(nxt, dict):
            nxt = {}
            node[key] = nxt
        node = nxt
    node[keys[-1]] = value
    return data


class PipelineConfig:
    """Loaded config file plus overrides, with dotted-path access."""

    def __init__(self, data: dict, path=None):
        if not isinstance(data, dict):
            raise ConfigError("config root must be a mapping")
        self.data = data
        self.path = str(path) if path is not None else None

    def get(self, dotted: str, default=None):
        node = self.data
        for key in dotted.split("."):
            if not isinstance(node, dict) or key not in node:
                return default
            node = node[key]
        return node

    def section(self, name: str, defaults: dict | None = None) -> dict:
        raw = self.data.get(name, {})
        if raw is None:
            raw = {}
        if not isinstance(raw, dict):
            raise ConfigError(f"config section {name!r} must be a mapping")
        return deep_merge(defaults or {}, raw)


def load_config(path=None, overrides=(), seed=None) -> PipelineConfig:
    """Read a YAML config (or start empty), apply overrides, override seed.

    Top-level `model` and `retarget_map` paths are checked for existence at
    load time so a bad config fails before any work starts.
    """
    if path is not None:
        p = Path(path)
        if not p.exists():
            raise FileNotFoundError(f"config file not found: {p}")
        try:
            data = yaml.safe_load(p.read_text()) or {}
        except yaml.YAMLError as exc:
            raise ConfigError(f"config file {p} is not valid YAML: {exc}") from None
    else:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError("config root must be a mapping")
    for spec in overrides:
        data = apply_override(data, spec)
    if seed is not None:
        data["seed"] = int(seed)
    for key in ("model", "retarget_map"):
        ref = data.get(key)
        if ref is not None and not Path(ref).exists():
            raise FileNotFoundError(f"config {key} not found: {ref}")
    return PipelineConfig(data, path)
