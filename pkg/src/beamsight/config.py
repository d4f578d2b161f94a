"""Nested run configuration: built-in defaults < JSON config file < command-line flags."""
from __future__ import annotations

import copy
import json
from dataclasses import asdict
from pathlib import Path

from .model import ModelConfig
from .nrlatency import NrTimingConfig
from .preprocess import PreprocConfig
from .scenegen import GeneratorConfig
from .training import TrainConfig


class ConfigError(ValueError):
    """Invalid or inconsistent configuration."""


SECTIONS = ("generator", "preprocess", "model", "train", "timing", "latency")


def default_config() -> dict:
    """Desk-scale defaults for every module, as a plain nested document."""
    pre = PreprocConfig().to_dict()
    pre.pop("gps_min")
    pre.pop("gps_max")
    return {
        "seed": 0,
        "scenario": "v2i-day",
        "generator": GeneratorConfig().to_dict(),
        "preprocess": pre,
        "model": ModelConfig().to_dict(),
        "train": TrainConfig().to_dict(),
        "timing": asdict(NrTimingConfig()),
        "latency": {"K": 64, "k_list": [1, 5, 9, 11, 15], "exhaustive_total_ms": None},
    }


def _merge(base: dict, override: dict, path: str = "") -> dict:
    out = copy.deepcopy(base)
    for key, val in override.items():
        where = f"{path}{key}"
        if key not in out:
            raise ConfigError(f"unknown config key {where!r}")
        if isinstance(out[key], dict) and isinstance(val, dict):
            out[key] = _merge(out[key], val, where + ".")
        else:
            out[key] = val
    return out


def load_config_file(path) -> dict:
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"config file {p} not found")
    try:
        doc = json.loads(p.read_text())
    except json.JSONDecodeError as e:
        raise ConfigError(f"{p}: invalid JSON ({e})") from e
    if not isinstance(doc, dict):
        raise ConfigError(f"{p}: top level must be an object")
    return doc


def resolve_config(file_doc: dict | None = None, overrides: dict | None = None) -> dict:
    """Apply a config-file document and then flag overrides on top of the defaults."""
    cfg = default_config()
    if file_doc:
        cfg = _merge(cfg, file_doc)
    if overrides:
        cfg = _merge(cfg, overrides)
    build_objects(cfg)  # validate eagerly
    return cfg


def build_objects(cfg: dict) -> dict:
    """Typed config objects for each section; raises ConfigError on invalid values."""
    try:
        return {
            "generator": GeneratorConfig.from_dict(cfg["generator"]),
            "preprocess": PreprocConfig.from_dict(cfg["preprocess"]),
            "model": ModelConfig.from_dict(cfg["model"]),
            "train": TrainConfig.from_dict({**cfg["train"], "seed": cfg["seed"]}),
            "timing": NrTimingConfig(**cfg["timing"]),
        }
    except (TypeError, ValueError, KeyError) as e:
        raise ConfigError(f"invalid configuration: {e}") from e
