"""Pipeline configuration: dataclasses, strict JSON parsing, round-tripping.

Unknown keys are rejected, defaults apply only for absent keys, and every
validation error names the offending path.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Tuple, Union

from .diffusion import CbdmConfig
from .filtering import FilterConfig
from .models import TrainConfig, classifier_train_defaults, denoiser_train_defaults

GENERATORS = ("none", "ddpm", "cbdm")


class ConfigError(ValueError):
    """Malformed or invalid configuration."""


@dataclass(frozen=True)
class DatasetConfig:
    source: str = "shapes"  # or "cifar10"
    num_classes: int = 10
    n1: int = 500
    ratio: float = 20.0
    profile: str = "exponential"
    height: int = 16
    width: int = 16
    channels: int = 1
    seed: int = 0
    test_seed: Optional[int] = None  # defaults to seed + 1
    test_per_class: int = 200
    cifar_train: Tuple[str, ...] = ()
    cifar_test: Tuple[str, ...] = ()

    def __post_init__(self):
        if self.source not in ("shapes", "cifar10"):
            raise ValueError(f"source must be 'shapes' or 'cifar10', got {self.source!r}")
        if self.ratio < 1:
            raise ValueError(f"ratio must be >= 1, got {self.ratio}")
        if self.profile not in ("exponential", "step"):
            raise ValueError(f"unknown profile {self.profile!r}")
        if self.source == "cifar10" and not self.cifar_train:
            raise ValueError("cifar10 source needs cifar_train paths")

    @property
    def resolved_test_seed(self):
        return self.seed + 1 if self.test_seed is None else self.test_seed


@dataclass(frozen=True)
class GroupBounds:
    many_min: int = 100
    few_max: int = 20

    def __post_init__(self):
        if self.many_min <= self.few_max:
            raise ValueError(
                f"many_min ({self.many_min}) must exceed few_max ({self.few_max})"
            )


@dataclass(frozen=True)
class ScheduleConfig:
    num_steps: int = 200
    beta_start: float = 1e-4
    beta_end: float = 0.02
    kind: str = "linear"

    def __post_init__(self):
        if self.num_steps < 1:
            raise ValueError("num_steps must be >= 1")
        if not (0.0 < self.beta_start <= self.beta_end < 1.0):
            raise ValueError(
                f"need 0 < beta_start <= beta_end < 1, got "
                f"({self.beta_start}, {self.beta_end})"
            )
        if self.kind != "linear":
            raise ValueError(f"unknown schedule kind {self.kind!r}")


@dataclass(frozen=True)
class PipelineConfig:
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    groups: GroupBounds = field(default_factory=GroupBounds)
    schedule: ScheduleConfig = field(default_factory=ScheduleConfig)
    generator: str = "cbdm"
    cbdm: CbdmConfig = field(default_factory=CbdmConfig)
    target_count: int = 500
    filter: Optional[FilterConfig] = field(
        default_factory=lambda: FilterConfig("prob", 5e-7)
    )
    sampling_seed: int = 104729
    denoiser_width: int = 32
    denoiser_train: TrainConfig = field(
        default_factory=lambda: denoiser_train_defaults(seed=1)
    )
    f0_train: TrainConfig = field(
        default_factory=lambda: classifier_train_defaults(seed=2)
    )
    classifier_train: TrainConfig = field(
        default_factory=lambda: classifier_train_defaults(seed=3, omega=0.3)
    )
    out_dir: Optional[str] = None

    def __post_init__(self):
        if self.generator not in GENERATORS:
            raise ValueError(f"generator must be one of {GENERATORS}, got {self.generator!r}")
        if self.target_count < 0:
            raise ValueError("target_count must be >= 0")
        if self.denoiser_width % 8 != 0:
            raise ValueError("denoiser_width must be a multiple of 8")


def with_master_seed(cfg, seed):
    """Reseed every stage from one master seed (data, diffusion, f0, final, sampling)."""
    return dataclasses.replace(
        cfg,
        dataset=dataclasses.replace(cfg.dataset, seed=seed, test_seed=None),
        denoiser_train=dataclasses.replace(cfg.denoiser_train, seed=seed + 1),
        f0_train=dataclasses.replace(cfg.f0_train, seed=seed + 2),
        classifier_train=dataclasses.replace(cfg.classifier_train, seed=seed + 3),
        sampling_seed=seed + 4,
    )


# ---------------------------------------------------------------------------
# Strict dict <-> dataclass conversion
# ---------------------------------------------------------------------------

_OPTIONAL_INT = ("test_seed", "threads")


def _type_name(value):
    return type(value).__name__


def _coerce(value, ftype, path):
    if ftype is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{path}: expected integer, got {_type_name(value)}")
        return value
    if ftype is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{path}: expected number, got {_type_name(value)}")
        return float(value)
    if ftype is str:
        if not isinstance(value, str):
            raise ConfigError(f"{path}: expected string, got {_type_name(value)}")
        return value
    if ftype is bool:
        if not isinstance(value, bool):
            raise ConfigError(f"{path}: expected boolean, got {_type_name(value)}")
        return value
    raise ConfigError(f"{path}: unsupported field type {ftype}")


def _load_dataclass(cls, data, path):
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: expected an object, got {_type_name(data)}")
    fields = {f.name: f for f in dataclasses.fields(cls)}
    unknown = set(data) - set(fields)
    if unknown:
        raise ConfigError(f"{path}: unknown key {sorted(unknown)[0]!r}")
    kwargs = {}
    for name, value in data.items():
        fpath = f"{path}.{name}" if path else name
        f = fields[name]
        if name == "filter":
            kwargs[name] = None if value is None else _load_dataclass(FilterConfig, value, fpath)
        elif name in _OPTIONAL_INT or name == "dataset_size":
            kwargs[name] = None if value is None else _coerce(value, int, fpath)
        elif name in _NESTED:
            kwargs[name] = _load_dataclass(_NESTED[name], value, fpath)
        elif name in ("cifar_train", "cifar_test"):
            if not isinstance(value, list) or not all(isinstance(v, str) for v in value):
                raise ConfigError(f"{fpath}: expected a list of strings")
            kwargs[name] = tuple(value)
        elif name == "out_dir":
            kwargs[name] = None if value is None else _coerce(value, str, fpath)
        else:
            kwargs[name] = _coerce(value, _base_type(f), fpath)
    try:
        return cls(**kwargs)
    except (ValueError, TypeError) as e:
        raise ConfigError(f"{path or 'config'}: {e}") from e


_NESTED = {
    "dataset": DatasetConfig,
    "groups": GroupBounds,
    "schedule": ScheduleConfig,
    "cbdm": CbdmConfig,
    "filter": FilterConfig,
    "denoiser_train": TrainConfig,
    "f0_train": TrainConfig,
    "classifier_train": TrainConfig,
}

_FIELD_TYPES = {
    "source": str, "num_classes": int, "n1": int, "ratio": float, "profile": str,
    "height": int, "width": int, "channels": int, "seed": int, "test_per_class": int,
    "many_min": int, "few_max": int,
    "num_steps": int, "beta_start": float, "beta_end": float, "kind": str,
    "generator": str, "target_count": int, "sampling_seed": int, "denoiser_width": int,
    "tau": float, "gamma": float, "contrast_sampling": str,
    "metric": str, "threshold": float,
    "epochs": int, "batch_size": int, "lr": float, "omega": float,
    "optimizer": str, "momentum": float, "weight_decay": float,
    "lr_schedule": str, "val_fraction": float, "augment": bool,
}


def _base_type(f):
    if f.name not in _FIELD_TYPES:
        raise ConfigError(f"no type rule for field {f.name!r}")
    return _FIELD_TYPES[f.name]


def config_from_dict(data):
    return _load_dataclass(PipelineConfig, data, "")


def config_to_dict(cfg):
    def encode(value):
        if dataclasses.is_dataclass(value) and not isinstance(value, type):
            return {f.name: encode(getattr(value, f.name))
                    for f in dataclasses.fields(value)}
        if isinstance(value, tuple):
            return [encode(v) for v in value]
        return value

    return encode(cfg)


def parse_config(path):
    """Load a PipelineConfig from a JSON file, strictly validated."""
    try:
        with open(path) as f:
            data = json.load(f)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}")
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}: invalid JSON ({e})")
    return config_from_dict(data)


def write_config(path, cfg):
    Path(path).write_text(json.dumps(config_to_dict(cfg), indent=2, sort_keys=True) + "\n")


def config_hash(cfg):
    """Stable hash of the effective configuration."""
    canonical = json.dumps(config_to_dict(cfg), sort_keys=True)
    return hashlib.sha256(canonical.encode()).hexdigest()[:16]
