"""Configuration dataclasses and YAML (de)serialization.

The config file mirrors the dataclass fields one-to-one under three top-level
sections: ``encoder``, ``loss``, ``train``.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import yaml


class ConfigError(ValueError):
    """Invalid or inconsistent configuration."""


@dataclass
class EncoderConfig:
    """Architecture hyperparameters for the encoder, edge enhancer and decoder.

    Default widths put the total trainable parameter count of the full
    autoencoder at ~0.51M (see ``param_count``).
    """

    shallow_channels: int = 32
    branch_channels: int = 32
    dilation_rates: list[int] = field(default_factory=lambda: [1, 3, 5])
    pyramid_depths: list[int] = field(default_factory=lambda: [1, 2, 3])
    pyramid_channels: int = 44
    attention_downsample_factor: int = 2
    attention_trunk_convs: int = 2
    attention_stages: int = 1
    leaky_slope: float = 0.2
    latent_channels: int = 64
    decoder_channels: list[int] = field(default_factory=lambda: [48, 24])

    def __post_init__(self):
        if self.attention_downsample_factor < 1:
            raise ConfigError("attention_downsample_factor must be >= 1")
        if len(self.decoder_channels) != 2:
            raise ConfigError(
                "decoder_channels must list the two hidden widths of the "
                "3-convolution decoder"
            )
        if not self.dilation_rates:
            raise ConfigError("dilation_rates must be non-empty")
        if not self.pyramid_depths:
            raise ConfigError("pyramid_depths must be non-empty")


@dataclass
class LossConfig:
    """Weights and extractor layers for the reconstruction objective."""

    lambda_grad: float = 0.5
    lambda_perp: float = 0.5
    perceptual_layers: list[str] = field(default_factory=lambda: ["relu4_3"])

    def __post_init__(self):
        if self.lambda_grad < 0 or self.lambda_perp < 0:
            raise ConfigError("loss balancing weights must be >= 0")


@dataclass
class AblationFlags:
    """Component toggles for the ablation arms."""

    use_drgo: bool = True
    use_grad_loss: bool = True


@dataclass
class TrainConfig:
    """Stage-1 reconstruction training hyperparameters."""

    epochs: int = 100
    initial_lr: float = 1e-4
    final_lr: float = 3e-7
    lr_schedule: str = "cosine"  # "cosine" | "constant"
    batch_size: int = 4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0
    validation_fraction: float = 0.1
    loss: LossConfig = field(default_factory=LossConfig)
    ablation_flags: AblationFlags = field(default_factory=AblationFlags)

    def __post_init__(self):
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.final_lr > self.initial_lr:
            raise ConfigError("final_lr must be <= initial_lr")
        if self.lr_schedule not in ("cosine", "constant"):
            raise ConfigError(f"unknown lr_schedule {self.lr_schedule!r}")
        if not 0.0 <= self.validation_fraction < 1.0:
            raise ConfigError("validation_fraction must lie in [0, 1)")


def harvard_preset() -> TrainConfig:
    """Training preset for 2D co-registered pairs: 100 epochs, cosine decay."""
    return TrainConfig(epochs=100, initial_lr=1e-4, final_lr=3e-7,
                       lr_schedule="cosine", batch_size=4)


def brats_preset() -> TrainConfig:
    """Training preset for sliced volume data: 25 epochs, constant lr."""
    return TrainConfig(epochs=25, initial_lr=1e-4, final_lr=1e-4,
                       lr_schedule="constant", batch_size=4)


PRESETS = {"harvard": harvard_preset, "brats": brats_preset}


def _as_dict(cfg) -> dict:
    return dataclasses.asdict(cfg)


def _from_dict(cls, data: dict):
    """Build a (possibly nested) config dataclass, rejecting unknown keys."""
    names = {f.name: f for f in dataclasses.fields(cls)}
    unknown = set(data) - set(names)
    if unknown:
        raise ConfigError(f"unknown {cls.__name__} keys: {sorted(unknown)}")
    kwargs = {}
    for key, value in data.items():
        if key == "loss" and isinstance(value, dict):
            value = _from_dict(LossConfig, value)
        elif key == "ablation_flags" and isinstance(value, dict):
            value = _from_dict(AblationFlags, value)
        kwargs[key] = value
    return cls(**kwargs)


def config_to_dict(encoder: EncoderConfig, train: TrainConfig) -> dict:
    return {
        "encoder": _as_dict(encoder),
        "loss": _as_dict(train.loss),
        "train": {k: v for k, v in _as_dict(train).items() if k != "loss"},
    }


def load_config(path: str | Path) -> tuple[EncoderConfig, TrainConfig]:
    """Load encoder/loss/train sections from a YAML config file.

    Missing sections fall back to defaults; unknown keys are rejected.
    """
    with open(path) as fh:
        raw = yaml.safe_load(fh) or {}
    if not isinstance(raw, dict):
        raise ConfigError(f"config root must be a mapping, got {type(raw).__name__}")
    unknown = set(raw) - {"encoder", "loss", "train"}
    if unknown:
        raise ConfigError(f"unknown config sections: {sorted(unknown)}")
    encoder = _from_dict(EncoderConfig, raw.get("encoder", {}))
    train_raw = dict(raw.get("train", {}))
    if "loss" in raw:
        train_raw["loss"] = raw["loss"]
    train = _from_dict(TrainConfig, train_raw)
    return encoder, train


def save_config(path: str | Path, encoder: EncoderConfig, train: TrainConfig) -> None:
    with open(path, "w") as fh:
        yaml.safe_dump(config_to_dict(encoder, train), fh, sort_keys=True)


def config_hash(encoder: EncoderConfig, train: TrainConfig | None = None) -> str:
    """Stable hash of a config snapshot, used to validate checkpoint loads."""
    payload = {"encoder": _as_dict(encoder)}
    if train is not None:
        payload["train"] = _as_dict(train)
    blob = json.dumps(payload, sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()
