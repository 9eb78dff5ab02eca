"""Audit run configuration: defaults, YAML file loading, override merging,
and validation. Every CLI flag maps onto one field here, so an audit is
fully described by a single diffable file plus a seed.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields
from pathlib import Path

import yaml

from .metrics import DEFAULT_EPSILON, KLD_WEIGHTINGS
from .model_zoo import SUPPORTED_MODELS
from .quantsim import PrecisionLevel

DEFAULT_PRECISIONS = ("f32", "int16", "int8")
REPORT_FORMATS = ("csv", "md", "json")


class ConfigError(ValueError):
    """Invalid audit configuration; the message names the offending field."""


@dataclass
class AuditConfig:
    image_dir: str = ""
    mask_dir: str = ""
    cache_dir: str = "cache"
    out_dir: str = "out"
    models: list[str] = field(default_factory=lambda: list(SUPPORTED_MODELS))
    precisions: list[str] = field(default_factory=lambda: list(DEFAULT_PRECISIONS))
    n: int = 50
    seed: int = 0
    epsilon: float = DEFAULT_EPSILON
    kld_weighting: str = "cam"
    workers: int = 1
    formats: list[str] = field(default_factory=lambda: list(REPORT_FORMATS))
    overlay_ids: list[str] = field(default_factory=list)
    pretrained: bool = True
    mask_generator: str | None = None
    failure_threshold: float = 0.0

    def as_dict(self) -> dict:
        return {
            "image_dir": self.image_dir,
            "mask_dir": self.mask_dir,
            "cache_dir": self.cache_dir,
            "out_dir": self.out_dir,
            "models": list(self.models),
            "precisions": list(self.precisions),
            "n": self.n,
            "seed": self.seed,
            "epsilon": self.epsilon,
            "kld_weighting": self.kld_weighting,
            "workers": self.workers,
            "formats": list(self.formats),
            "overlay_ids": list(self.overlay_ids),
            "pretrained": self.pretrained,
            "mask_generator": self.mask_generator,
            "failure_threshold": self.failure_threshold,
        }


_FIELD_NAMES = {f.name for f in fields(AuditConfig)}
_LIST_FIELDS = {"models", "precisions", "formats", "overlay_ids"}


def _as_list(value) -> list[str]:
    if isinstance(value, str):
        return [part.strip() for part in value.split(",") if part.strip()]
    return [str(v) for v in value]


def load_config_file(path) -> dict:
    """Key-value config file (YAML). Unknown keys are config errors."""
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    try:
        data = yaml.safe_load(path.read_text())
    except yaml.YAMLError as exc:
        raise ConfigError(f"config file not parseable: {exc}") from exc
    if data is None:
        return {}
    if not isinstance(data, dict):
        raise ConfigError("config file must hold a mapping of settings")
    unknown = sorted(set(data) - _FIELD_NAMES)
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
    return data


def build_config(file_values: dict | None = None, overrides: dict | None = None) -> AuditConfig:
    """Defaults, then config-file values, then explicit overrides (CLI flags).
    None-valued overrides mean "not given" and are ignored."""
    merged: dict = {}
    for source in (file_values or {}), (overrides or {}):
        for key, value in source.items():
            if value is None:
                continue
            if key not in _FIELD_NAMES:
                raise ConfigError(f"unknown config key: {key}")
            merged[key] = _as_list(value) if key in _LIST_FIELDS else value
    return AuditConfig(**merged)


def resolve_paths(config: AuditConfig, workdir=None) -> AuditConfig:
    """Anchor every relative path at workdir (default: process cwd)."""
    base = Path(workdir) if workdir is not None else Path.cwd()

    def anchor(p: str) -> str:
        return str(p) if Path(p).is_absolute() else str(base / p)

    config.image_dir = anchor(config.image_dir)
    config.mask_dir = anchor(config.mask_dir)
    config.cache_dir = anchor(config.cache_dir)
    config.out_dir = anchor(config.out_dir)
    return config


def validate(config: AuditConfig) -> AuditConfig:
    """Field-by-field checks, run before any model or image is loaded."""
    if not config.image_dir:
        raise ConfigError("image_dir: required")
    if not config.mask_dir:
        raise ConfigError("mask_dir: required")
    if not config.models:
        raise ConfigError("models: at least one model required")
    for name in config.models:
        if name not in SUPPORTED_MODELS:
            raise ConfigError(
                f"models: unsupported model {name!r} "
                f"(choose from {', '.join(SUPPORTED_MODELS)})"
            )
    if len(set(config.models)) != len(config.models):
        raise ConfigError("models: duplicate entries")
    if not config.precisions:
        raise ConfigError("precisions: at least one precision required")
    for label in config.precisions:
        try:
            PrecisionLevel.from_name(label)
        except ValueError as exc:
            raise ConfigError(f"precisions: {exc}") from exc
    if len(set(config.precisions)) != len(config.precisions):
        raise ConfigError("precisions: duplicate entries")
    if int(config.n) < 1:
        raise ConfigError("n: sample size must be >= 1")
    config.n = int(config.n)
    config.seed = int(config.seed)
    config.epsilon = float(config.epsilon)
    if config.epsilon <= 0:
        raise ConfigError("epsilon: must be > 0")
    if config.kld_weighting not in KLD_WEIGHTINGS:
        raise ConfigError(
            f"kld_weighting: must be one of {', '.join(KLD_WEIGHTINGS)}"
        )
    config.workers = int(config.workers)
    if config.workers < 1:
        raise ConfigError("workers: must be >= 1")
    if not config.formats:
        raise ConfigError("formats: at least one report format required")
    for fmt in config.formats:
        if fmt not in REPORT_FORMATS:
            raise ConfigError(
                f"formats: unknown format {fmt!r} "
                f"(choose from {', '.join(REPORT_FORMATS)})"
            )
    config.failure_threshold = float(config.failure_threshold)
    if not 0.0 <= config.failure_threshold <= 1.0:
        raise ConfigError("failure_threshold: must be in [0, 1]")
    config.pretrained = bool(config.pretrained)
    return config
