"""Run configuration.

One YAML file covers every hyperparameter of the pipeline. Defaults follow the
reference hyperparameter table (L = W = 50, N = 3, hidden 128, latent 64,
two recurrent layers, theta = 0.01, epsilon = delta = 1e-8); the remaining
defaults are implementation choices documented in the README.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import yaml

from blade.errors import ConfigError

CHANNELS = ("packet_sizes", "inter_arrival", "tcp_flags")


@dataclass
class TrainingConfig:
    epochs: int = 100
    batch_size: int = 256
    learning_rate: float = 1e-3
    # None -> derived from the top-level seed
    seed: int | None = None


@dataclass
class EncoderConfig:
    hidden_size: int = 128
    latent_dim: int = 64
    num_recurrent_layers: int = 2
    attention_heads: int = 1
    training: TrainingConfig = field(default_factory=TrainingConfig)

    def validate(self) -> None:
        for name in ("hidden_size", "latent_dim", "num_recurrent_layers", "attention_heads"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)}")
        if self.latent_dim > 2 * self.hidden_size:
            raise ConfigError("latent_dim must not exceed 2 * hidden_size")
        if (2 * self.hidden_size) % self.attention_heads:
            raise ConfigError("2 * hidden_size must be divisible by attention_heads")
        t = self.training
        if t.epochs < 1 or t.batch_size < 1 or t.learning_rate <= 0:
            raise ConfigError("training epochs, batch_size and learning_rate must be positive")


@dataclass
class DataConfig:
    path: str | None = None
    # "key" groups by the full user_key, "ip" by the part before the last ':'
    group_by: str = "key"
    channels: tuple[str, ...] = CHANNELS
    L: int = 50
    W: int = 50
    split_ratio: float = 0.7


@dataclass
class LabelingConfig:
    variance_threshold: float = 0.01
    variance_target: float = 0.95
    # None -> max(15, 0.5% of training flows)
    min_cluster_size: int | None = None
    min_samples: int | None = None


@dataclass
class ScoringConfig:
    epsilon: float = 1e-8
    delta: float = 1e-8


@dataclass
class BehaviorConfig:
    extractor: EncoderConfig = field(default_factory=EncoderConfig)
    nu: float = 0.05
    # None -> 1 / d on standardized representations
    gamma: float | None = None
    # 0 = full model; 1 = raw losses instead of calibrated scores;
    # 2 = no pseudo-label row; 3 = no anomaly-score row
    variant: int = 0


@dataclass
class Config:
    data: DataConfig = field(default_factory=DataConfig)
    flow_autoencoder: EncoderConfig = field(default_factory=EncoderConfig)
    labeling: LabelingConfig = field(default_factory=LabelingConfig)
    scoring: ScoringConfig = field(default_factory=ScoringConfig)
    behavior: BehaviorConfig = field(default_factory=BehaviorConfig)
    seed: int = 0

    def __post_init__(self):
        self.reseed(self.seed, force=False)

    def reseed(self, seed: int, force: bool = True) -> None:
        """Derive every stage seed from one top-level seed."""
        self.seed = seed
        for offset, enc in enumerate((self.flow_autoencoder, self.behavior.extractor)):
            if force or enc.training.seed is None:
                enc.training.seed = seed + offset

    def validate(self) -> None:
        d = self.data
        if d.L < 1 or d.W < 1:
            raise ConfigError("L and W must be >= 1")
        if not 0 < d.split_ratio < 1:
            raise ConfigError("split_ratio must lie in (0, 1)")
        if d.group_by not in ("key", "ip"):
            raise ConfigError(f"group_by must be 'key' or 'ip', got {d.group_by!r}")
        unknown = [c for c in d.channels if c not in CHANNELS]
        if unknown:
            raise ConfigError(f"unsupported channel(s): {unknown}; choose from {list(CHANNELS)}")
        if not d.channels:
            raise ConfigError("at least one channel is required")
        self.flow_autoencoder.validate()
        self.behavior.extractor.validate()
        lab = self.labeling
        if lab.variance_threshold < 0 or not 0 < lab.variance_target <= 1:
            raise ConfigError("variance_threshold >= 0 and variance_target in (0, 1] required")
        if self.scoring.epsilon <= 0 or self.scoring.delta <= 0:
            raise ConfigError("epsilon and delta must be positive")
        if not 0 < self.behavior.nu <= 1:
            raise ConfigError("nu must lie in (0, 1]")
        if self.behavior.variant not in (0, 1, 2, 3):
            raise ConfigError(f"unknown ablation variant {self.behavior.variant}")

    def to_dict(self) -> dict[str, Any]:
        out = dataclasses.asdict(self)
        out["data"]["channels"] = list(self.data.channels)
        return out


def _build(cls, raw: Any, where: str):
    if not dataclasses.is_dataclass(cls):
        return raw
    if raw is None:
        return cls()
    if not isinstance(raw, dict):
        raise ConfigError(f"section '{where}' must be a mapping")
    fields = {f.name: f for f in dataclasses.fields(cls)}
    extra = set(raw) - set(fields)
    if extra:
        raise ConfigError(f"unknown key(s) in '{where}': {sorted(extra)}")
    kwargs = {}
    hints = {
        "training": TrainingConfig,
        "extractor": EncoderConfig,
        "flow_autoencoder": EncoderConfig,
        "data": DataConfig,
        "labeling": LabelingConfig,
        "scoring": ScoringConfig,
        "behavior": BehaviorConfig,
    }
    for key, value in raw.items():
        sub = hints.get(key)
        if sub is not None:
            kwargs[key] = _build(sub, value, f"{where}.{key}" if where else key)
        elif key == "channels":
            kwargs[key] = tuple(value)
        else:
            kwargs[key] = value
    return cls(**kwargs)


def config_from_dict(raw: dict[str, Any] | None) -> Config:
    cfg = _build(Config, raw or {}, "")
    cfg.validate()
    return cfg


def load_config(path: str | Path) -> Config:
    path = Path(path)
    try:
        raw = yaml.safe_load(path.read_text())
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc
    except yaml.YAMLError as exc:
        raise ConfigError(f"config file is not valid YAML: {exc}") from exc
    cfg = config_from_dict(raw)
    if cfg.data.path is not None and not Path(cfg.data.path).is_absolute():
        cfg.data.path = str((path.parent / cfg.data.path).resolve())
    return cfg
