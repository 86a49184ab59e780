"""Run configuration: sectioned key=value files, overrides, and the digest.

The digest covers only what a checkpoint must agree on to be loadable
(architecture, seed, data sources), so runs that differ in step counts or
loss weights can share checkpoints while incompatible ones are rejected.
"""
from __future__ import annotations

import configparser
import hashlib
import io
from dataclasses import dataclass, fields
from pathlib import Path

from .image import (
    ImageError,
    ImageRGB,
    list_pngs,
    load_image,
    read_manifest,
    synth_scored_dataset,
    synth_sr_dataset,
)
from .losses import LossWeights

__all__ = [
    "ConfigError", "RunConfig", "load_config", "apply_overrides",
    "write_config", "config_digest", "parse_dataset_source",
    "load_sr_images", "load_scored_images",
]


class ConfigError(ValueError):
    """Malformed configuration file, key, or value."""


@dataclass
class RunConfig:
    # model
    seed: int = 1
    channels: int = 16
    shared_blocks: int = 4
    upscale_blocks: int = 1
    residual_scaling: float = 1.0
    repr_length: int = 64
    disc_width: int = 8
    disc_fc_units: int = 64
    # run
    scale_factor: int = 500
    lr_patch: int = 12
    loss_weights: str = "eq8"
    pretrain_steps: int = 1_000_000
    pretrain_batch: int = 16
    pretrain_lr: float = 1e-4
    halving_interval: int = 200_000
    perceptual_steps: int = 400_000
    gen_lr: float = 1e-5
    disc_lr: float = 2e-5
    multipass: bool = True
    alpha_aesthetic: float = 0.8
    alpha_subjective: float = 0.8
    # data
    dataset: str = "synthetic:1:16"
    scored_dataset: str = "synthetic:2:600"
    scored_val_count: int = 100
    synth_size: int = 96
    scored_size: int = 48
    eval_dataset: str = "synthetic:99:4"
    # io
    out_dir: str = "runs/desk"

    def validate(self) -> "RunConfig":
        if self.scale_factor < 1:
            raise ConfigError(f"scale_factor must be >= 1, got {self.scale_factor}")
        if self.lr_patch < 8:
            raise ConfigError(f"lr_patch must be >= 8, got {self.lr_patch}")
        if self.pretrain_batch < 1:
            raise ConfigError(f"pretrain_batch must be >= 1, got {self.pretrain_batch}")
        if self.scored_val_count < 1:
            raise ConfigError(f"scored_val_count must be >= 1, got {self.scored_val_count}")
        for name in ("alpha_aesthetic", "alpha_subjective"):
            value = getattr(self, name)
            if not 0.0 < value <= 2.0:
                raise ConfigError(f"{name} must be in (0, 2], got {value}")
        try:
            LossWeights.from_preset(self.loss_weights)
        except ValueError as err:
            raise ConfigError(f"loss_weights: {err}") from err
        for key in ("dataset", "scored_dataset", "eval_dataset"):
            parse_dataset_source(getattr(self, key))
        return self


SECTIONS: dict[str, tuple[str, ...]] = {
    "model": ("seed", "channels", "shared_blocks", "upscale_blocks",
              "residual_scaling", "repr_length", "disc_width", "disc_fc_units"),
    "run": ("scale_factor", "lr_patch", "loss_weights", "pretrain_steps",
            "pretrain_batch", "pretrain_lr", "halving_interval",
            "perceptual_steps", "gen_lr", "disc_lr", "multipass",
            "alpha_aesthetic", "alpha_subjective"),
    "data": ("dataset", "scored_dataset", "scored_val_count", "synth_size",
             "scored_size", "eval_dataset"),
    "io": ("out_dir",),
}

_FIELD_TYPES = {f.name: f.type for f in fields(RunConfig)}
_KEY_SECTION = {key: section for section, keys in SECTIONS.items() for key in keys}


def _convert(key: str, raw: str):
    kind = _FIELD_TYPES[key]
    raw = raw.strip()
    try:
        if kind == "bool":
            lowered = raw.lower()
            if lowered in ("true", "yes", "1", "on"):
                return True
            if lowered in ("false", "no", "0", "off"):
                return False
            raise ValueError(f"not a boolean: {raw!r}")
        if kind == "int":
            return int(raw)
        if kind == "float":
            return float(raw)
        return raw
    except ValueError as err:
        raise ConfigError(f"bad value for {key}: {err}") from err


def load_config(path) -> RunConfig:
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as err:
        raise ConfigError(f"cannot read config {path}: {err}") from err
    try:
        parser.read_string(text, source=str(path))
    except configparser.Error as err:
        raise ConfigError(f"cannot parse config {path}: {err}") from err
    config = RunConfig()
    for section in parser.sections():
        if section not in SECTIONS:
            raise ConfigError(f"{path}: unknown section [{section}]")
        for key, raw in parser.items(section):
            if key not in SECTIONS[section]:
                raise ConfigError(f"{path}: unknown key {key!r} in [{section}]")
            setattr(config, key, _convert(key, raw))
    return config.validate()


def apply_overrides(config: RunConfig, overrides) -> RunConfig:
    """key=value pairs (section-free; keys are unique) that win over the file."""
    for item in overrides or ():
        key, sep, raw = item.partition("=")
        key = key.strip()
        if not sep or not key:
            raise ConfigError(f"override must look like key=value, got {item!r}")
        if key not in _FIELD_TYPES:
            raise ConfigError(f"unknown config key {key!r}")
        setattr(config, key, _convert(key, raw))
    return config.validate()


def write_config(config: RunConfig, path) -> None:
    """Fully resolved, deterministic section ordering; reloads identically."""
    buf = io.StringIO()
    for section, keys in SECTIONS.items():
        buf.write(f"[{section}]\n")
        for key in keys:
            buf.write(f"{key} = {getattr(config, key)}\n")
        buf.write("\n")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(buf.getvalue())


def config_digest(config: RunConfig) -> str:
    """Checkpoint-compatibility digest over the model and data sections."""
    parts = []
    for section in ("model", "data"):
        for key in SECTIONS[section]:
            parts.append(f"{section}.{key}={getattr(config, key)!r}")
    return hashlib.sha256("\n".join(parts).encode()).hexdigest()


# ---------------------------------------------------------------- data access

def parse_dataset_source(spec: str):
    """'synthetic:<seed>:<count>' or a directory/manifest path."""
    spec = spec.strip()
    if not spec:
        raise ConfigError("empty dataset source")
    if spec.startswith("synthetic:"):
        parts = spec.split(":")
        if len(parts) != 3:
            raise ConfigError(f"synthetic source must be synthetic:<seed>:<count>, got {spec!r}")
        try:
            seed, count = int(parts[1]), int(parts[2])
        except ValueError as err:
            raise ConfigError(f"bad synthetic source {spec!r}: {err}") from err
        if count < 1:
            raise ConfigError(f"synthetic source needs count >= 1, got {count}")
        return ("synthetic", seed, count)
    return ("path", spec)


def load_sr_images(spec: str, size: int) -> list[ImageRGB]:
    source = parse_dataset_source(spec)
    if source[0] == "synthetic":
        return synth_sr_dataset(source[1], source[2], size=size)
    path = Path(source[1])
    if path.is_dir():
        files = list_pngs(path)
    elif path.is_file():
        files = read_manifest(path)
    else:
        raise ImageError(f"dataset source {path} does not exist")
    if not files:
        raise ImageError(f"dataset source {path} lists no images")
    return [load_image(f) for f in files]


def load_scored_images(spec: str, size: int):
    source = parse_dataset_source(spec)
    if source[0] != "synthetic":
        # scored labels only exist for generated data in this artifact
        raise ConfigError(f"scored dataset must be synthetic:<seed>:<count>, got {spec!r}")
    return synth_scored_dataset(source[1], source[2], size=size)
