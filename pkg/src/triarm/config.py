"""YAML experiment configs with dotted-path command-line overrides."""

from __future__ import annotations

import copy
import re
from dataclasses import fields
from typing import Optional

import yaml

_SCI_FLOAT = re.compile(r"[-+]?(\d+\.?\d*|\.\d+)[eE][-+]?\d+")

from .env import EnvConfig
from .meta import AdaptConfig
from .sac import SACHyper


def load_yaml(path) -> dict:
    with open(path) as f:
        cfg = yaml.safe_load(f) or {}
    if not isinstance(cfg, dict):
        raise ValueError(f"config root must be a mapping, got {type(cfg)}")
    return cfg


def apply_overrides(cfg: dict, overrides: list[str]) -> dict:
    """Each override is `section.key=value`; values parse as YAML scalars
    so `adapt.inner_lr=3e-3` and `train.difficulties=[easy]` both work."""
    out = copy.deepcopy(cfg)
    for item in overrides:
        if "=" not in item:
            raise ValueError(f"override {item!r} is not key=value")
        dotted, raw = item.split("=", 1)
        keys = dotted.split(".")
        node = out
        for k in keys[:-1]:
            node = node.setdefault(k, {})
            if not isinstance(node, dict):
                raise ValueError(f"override path {dotted!r} crosses a scalar")
        value = yaml.safe_load(raw)
        if isinstance(value, str) and _SCI_FLOAT.fullmatch(value):
            value = float(value)   # YAML 1.1 misses dot-less exponents
        node[keys[-1]] = value
    return out


def _from_section(cls, section: Optional[dict]):
    section = section or {}
    known = {f.name for f in fields(cls)}
    unknown = set(section) - known
    if unknown:
        raise KeyError(f"unknown {cls.__name__} keys: {sorted(unknown)}")
    return cls(**section)


def build_adapt(cfg: dict) -> AdaptConfig:
    return _from_section(AdaptConfig, cfg.get("adapt"))


def build_hyper(cfg: dict) -> SACHyper:
    return _from_section(SACHyper, cfg.get("sac"))


def build_env(cfg: dict) -> EnvConfig:
    return _from_section(EnvConfig, cfg.get("env"))
