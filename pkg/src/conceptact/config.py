"""TOML run configuration with sectioned keys, strict validation and
flag > file > default precedence."""
from __future__ import annotations

import copy
import os
import sys
from dataclasses import asdict, fields
from pathlib import Path

from .act import ActConfig
from .train_eval import FRACTIONS, DEFAULT_SEEDS, SEED_PRESETS, TrainConfig

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover
    import tomli as tomllib

ENV_CONFIG = "CONCEPTACT_CONFIG"

_MODEL_KEYS = ("method", "d_model", "heads", "enc_layers", "dec_layers", "vae_layers", "d_ff", "chunk", "latent",
               "patch", "cameras", "image_size", "d_s", "d_a", "dropout", "d_concept", "heads_dropout",
               "concept_proj_init")
_LOSS_KEYS = ("kl_weight", "concept_weight", "label_smoothing")


def _defaults() -> dict:
    act, tr = asdict(ActConfig()), asdict(TrainConfig())
    tr.pop("method")
    tr["frozen"] = list(tr["frozen"])
    return {
        "model": {k: act[k] for k in _MODEL_KEYS},
        "loss": {k: act[k] for k in _LOSS_KEYS},
        "train": {**tr, "seeds": list(DEFAULT_SEEDS), "fractions": list(FRACTIONS),
                  "methods": ["act", "conceptact_transformer", "conceptact_heads"]},
        "sim": {"task": "sorting", "episodes": 64, "holdout_episodes": 16, "data_seed": 0,
                "sorting_rule": "equation", "ordering_holdout_fraction": 6 / 26, "include_location": False},
        "eval": {"episodes_per_scenario": 1, "ensemble": True, "ensemble_decay": act["ensemble_decay"],
                 "bootstrap_reps": 2000, "confidence": 0.95},
    }


DEFAULTS = _defaults()

KEY_DOCS = {
    "model.method": "act | conceptact_transformer | conceptact_heads",
    "model.d_model": "transformer width",
    "model.chunk": "action chunk length k",
    "model.latent": "style-variable size",
    "model.d_concept": "hidden width of the prediction heads",
    "model.concept_proj_init": "uniform | identity",
    "loss.kl_weight": "beta on the KL term",
    "loss.concept_weight": "lambda on the concept term",
    "loss.label_smoothing": "epsilon for concept targets",
    "train.lr": "AdamW learning rate (full scale: 3e-5)",
    "train.fraction": "share of training episodes, stratified by concept values",
    "sim.episodes": "training demonstrations to generate",
    "sim.holdout_episodes": "extra demonstrations kept out of training",
    "eval.ensemble_decay": "m in w_i = exp(-m i)",
}


class ConfigError(ValueError):
    pass


def _coerce(value, default, key: str):
    if isinstance(default, bool):
        if isinstance(value, str):
            lowered = value.lower()
            if lowered in ("1", "true", "yes", "on"):
                return True
            if lowered in ("0", "false", "no", "off"):
                return False
            raise ConfigError(f"{key}: expected a boolean, got {value!r}")
        return bool(value)
    if isinstance(default, int) and not isinstance(default, bool):
        try:
            if isinstance(value, float) and not value.is_integer():
                raise ValueError
            return int(value)
        except (TypeError, ValueError):
            raise ConfigError(f"{key}: expected an integer, got {value!r}") from None
    if isinstance(default, float):
        try:
            return float(value)
        except (TypeError, ValueError):
            raise ConfigError(f"{key}: expected a number, got {value!r}") from None
    if isinstance(default, list):
        if key == "train.seeds" and isinstance(value, str) and value in SEED_PRESETS:
            return list(SEED_PRESETS[value])
        if isinstance(value, str):
            value = [v for v in value.split(",") if v]
        inner = default[0] if default else ""
        return [_coerce(v, inner, key) for v in value]
    return str(value)


def merge(base: dict, overrides: dict, source: str) -> dict:
    out = copy.deepcopy(base)
    for section, values in overrides.items():
        if section not in DEFAULTS:
            raise ConfigError(f"{source}: unknown section [{section}]")
        if not isinstance(values, dict):
            raise ConfigError(f"{source}: [{section}] must be a table")
        for key, value in values.items():
            if key not in DEFAULTS[section]:
                raise ConfigError(f"{source}: unknown key {section}.{key}")
            out[section][key] = _coerce(value, DEFAULTS[section][key], f"{section}.{key}")
    return out


def parse_assignments(pairs) -> dict:
    """``["train.lr=0.01", ...]`` -> ``{"train": {"lr": "0.01"}}``."""
    out: dict = {}
    for item in pairs or ():
        key, sep, value = item.partition("=")
        section, dot, name = key.strip().partition(".")
        if not sep or not dot:
            raise ConfigError(f"override {item!r} must look like section.key=value")
        out.setdefault(section, {})[name] = value.strip()
    return out


def load_config(path=None, overrides: dict | None = None) -> tuple[dict, str]:
    """Resolved config plus the raw text of the file (echoed into manifests)."""
    cfg = copy.deepcopy(DEFAULTS)
    text = ""
    path = path or os.environ.get(ENV_CONFIG) or None
    if path:
        p = Path(path)
        try:
            text = p.read_text()
            data = tomllib.loads(text)
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {p}") from None
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"{p}: {exc}") from None
        cfg = merge(cfg, data, str(p))
    if overrides:
        cfg = merge(cfg, overrides, "command line")
    return cfg, text


def model_config(cfg: dict, method: str | None = None) -> ActConfig:
    params = {**cfg["model"], **cfg["loss"], "ensemble_decay": cfg["eval"]["ensemble_decay"]}
    if method:
        params["method"] = method
    try:
        return ActConfig(**params)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def train_config(cfg: dict, method: str | None = None) -> TrainConfig:
    known = {f.name for f in fields(TrainConfig)}
    params = {k: v for k, v in cfg["train"].items() if k in known}
    params["method"] = method or cfg["model"]["method"]
    try:
        return TrainConfig(**params)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def to_toml(cfg: dict) -> str:
    """Minimal TOML writer for the flat section/key layout used here."""
    def fmt(v):
        if isinstance(v, bool):
            return "true" if v else "false"
        if isinstance(v, str):
            return '"' + v.replace("\\", "\\\\").replace('"', '\\"') + '"'
        if isinstance(v, list):
            return "[" + ", ".join(fmt(x) for x in v) + "]"
        return repr(v)
    lines = []
    for section, values in cfg.items():
        lines.append(f"[{section}]")
        for k, v in values.items():
            doc = KEY_DOCS.get(f"{section}.{k}")
            lines.append(f"{k} = {fmt(v)}" + (f"  # {doc}" if doc else ""))
        lines.append("")
    return "\n".join(lines)
