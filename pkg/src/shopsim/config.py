"""Layered configuration: defaults <- config file <- flags <- environment.

The config file is TOML with one table per subsystem. Environment variables
override everything using the prefix SHOPSIM_<SECTION>_<KEY> (for example
SHOPSIM_SERVICE_PORT=9000). Values are coerced to the type of the default
they replace.
"""

from __future__ import annotations

import copy
import hashlib
import json
import sys

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .annotate import DEFAULT_EXAMPLE_TEXT, ProviderConfig
from .evaluation import MatcherConfig
from .rewards import RewardConfig

ENV_PREFIX = "SHOPSIM_"

DEFAULTS = {
    "pipeline": {
        "history_window": 3,
        "split_ratio": 0.8,
        "seed": 17,
        "char_budget": 100_000,
    },
    "annotate": {
        "provider": "mock",
        "endpoint": "",
        "model": "mock-template-v1",
        "api_key_env": "SHOPSIM_API_KEY",
        "cache_dir": ".shopsim-cache",
        "concurrency": 4,
        "max_retries": 5,
        "backoff_base": 0.5,
        "timeout": 30.0,
        "example_text": DEFAULT_EXAMPLE_TEXT,
    },
    "reward": {
        "r_format_value": 1.0,
        "r_type_value": 1.0,
        "w_click_type": 0.5,
        "w_name": 0.5,
        "w_text": 1.0,
        "dars": 10_000.0,
        "rationale_span_only": True,
        "matcher_mode": "normalized",
        "matcher_threshold": 0.9,
    },
    "service": {
        "host": "127.0.0.1",
        "port": 8731,
        "max_batch": 256,
        "max_body_bytes": 8 * 1024 * 1024,
        "workers": 1,
    },
    "eval": {
        "matcher_mode": "normalized",
        "matcher_threshold": 0.9,
    },
    "log": {
        "level": "info",
    },
}


def _deep_merge(base: dict, override: dict) -> dict:
    merged = dict(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = _deep_merge(merged[key], value)
        else:
            merged[key] = value
    return merged


def load_config(path=None) -> dict:
    """Defaults merged with an optional TOML file."""
    config = copy.deepcopy(DEFAULTS)
    if path:
        with open(path, "rb") as handle:
            config = _deep_merge(config, tomllib.load(handle))
    return config


def apply_overrides(config: dict, overrides: dict) -> dict:
    """Apply {section: {key: value}} overrides, skipping None values (unset flags)."""
    for section, values in overrides.items():
        for key, value in values.items():
            if value is not None:
                config.setdefault(section, {})[key] = value
    return config


def _coerce(raw: str, like):
    if isinstance(like, bool):
        return raw.lower() in ("1", "true", "yes", "on")
    if isinstance(like, int):
        return int(raw)
    if isinstance(like, float):
        return float(raw)
    return raw


def apply_env(config: dict, environ) -> dict:
    """Overlay SHOPSIM_<SECTION>_<KEY> environment variables onto known keys."""
    for name, raw in environ.items():
        if not name.startswith(ENV_PREFIX):
            continue
        rest = name[len(ENV_PREFIX) :]
        section, _, key = rest.partition("_")
        section, key = section.lower(), key.lower()
        if section in config and key in config[section]:
            config[section][key] = _coerce(raw, config[section][key])
    return config


def effective_config(path=None, flag_overrides=None, environ=None) -> dict:
    """Full precedence chain: defaults <- file <- flags <- environment."""
    config = load_config(path)
    if flag_overrides:
        apply_overrides(config, flag_overrides)
    if environ is not None:
        apply_env(config, environ)
    return config


def reward_config_from(section: dict) -> RewardConfig:
    return RewardConfig(
        r_format_value=float(section["r_format_value"]),
        r_type_value=float(section["r_type_value"]),
        w_click_type=float(section["w_click_type"]),
        w_name=float(section["w_name"]),
        w_text=float(section["w_text"]),
        dars=float(section["dars"]),
        dars_per_type={k: float(v) for k, v in section.get("dars_per_type", {}).items()},
        rationale_span_only=bool(section["rationale_span_only"]),
        matcher=MatcherConfig(
            mode=section["matcher_mode"],
            threshold=float(section["matcher_threshold"]),
        ),
    )


def provider_config_from(section: dict) -> ProviderConfig:
    return ProviderConfig(
        name=section["provider"],
        endpoint=section["endpoint"],
        model=section["model"],
        api_key_env=section["api_key_env"],
        max_retries=int(section["max_retries"]),
        backoff_base=float(section["backoff_base"]),
        timeout=float(section["timeout"]),
    )


def matcher_config_from(section: dict) -> MatcherConfig:
    return MatcherConfig(mode=section["matcher_mode"], threshold=float(section["matcher_threshold"]))


def config_digest(section: dict) -> str:
    """Stable fingerprint of a config section for health reporting."""
    canonical = json.dumps(section, sort_keys=True, ensure_ascii=False)
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()
