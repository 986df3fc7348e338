"""Run configuration: a YAML key/value tree plus command-line overrides.

Precedence, lowest to highest: built-in defaults, preset, config file,
``--set key.path=value`` overrides, dedicated command-line flags.
"""
from __future__ import annotations

import copy
from dataclasses import fields
from pathlib import Path

import yaml

from .models import ModelSpec
from .trainer import TrainConfig


class ConfigError(ValueError):
    """Invalid configuration file or override."""


DEFAULTS = {
    "task": "balls",
    "seed": 0,
    "data": {"train": None, "test": None},
    "model": {"arch": "VAIN"},
    "train": {},
}


def load(path: str | Path | None) -> dict:
    if path is None:
        return {}
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    try:
        tree = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    if tree is None:
        return {}
    if not isinstance(tree, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    return tree


def merge(base: dict, over: dict) -> dict:
    """Recursive dict merge; values in ``over`` win."""
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def apply_overrides(tree: dict, assignments: list[str]) -> dict:
    """Apply ``a.b.c=value`` strings; values are parsed as YAML scalars/lists."""
    out = copy.deepcopy(tree)
    for item in assignments or []:
        key, sep, raw = item.partition("=")
        if not sep or not key.strip():
            raise ConfigError(f"override {item!r} is not key=value")
        try:
            value = yaml.safe_load(raw)
        except yaml.YAMLError as exc:
            raise ConfigError(f"override {item!r}: {exc}") from exc
        if isinstance(value, str):
            # YAML 1.1 reads "1e-3" as a string
            try:
                value = float(value)
            except ValueError:
                pass
        node = out
        parts = key.strip().split(".")
        for p in parts[:-1]:
            node = node.setdefault(p, {})
            if not isinstance(node, dict):
                raise ConfigError(f"override {item!r}: {p} is not a mapping")
        node[parts[-1]] = value
    return out


def resolve(tree: dict) -> dict:
    return merge(DEFAULTS, tree)


def _build(cls, values: dict, what: str, **fixed):
    names = {f.name for f in fields(cls)}
    unknown = set(values) - names
    if unknown:
        raise ConfigError(f"unknown {what} keys: {sorted(unknown)}")
    kw = dict(values)
    kw.update(fixed)
    for k in ("enc_hidden", "dec_hidden", "pair_hidden"):
        if k in kw:
            kw[k] = tuple(kw[k])
    try:
        return cls(**kw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid {what}: {exc}") from exc


def model_spec(tree: dict, n_features: int, **fixed) -> ModelSpec:
    return _build(ModelSpec, tree.get("model", {}), "model", n_features=n_features,
                  seed=tree.get("seed", 0), **fixed)


def train_config(tree: dict, **fixed) -> TrainConfig:
    return _build(TrainConfig, tree.get("train", {}), "train", seed=tree.get("seed", 0), **fixed)


def dump(tree: dict) -> str:
    return yaml.safe_dump(tree, sort_keys=True, default_flow_style=False)
