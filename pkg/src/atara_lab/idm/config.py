"""Model, training and augmentation settings for the inverse dynamics model."""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field, asdict, fields

from ..kinematics import WEIGHTED_INDICES


def _from_dict(cls, d):
    d = dict(d or {})
    unknown = set(d) - {f.name for f in fields(cls)}
    if unknown:
        raise ValueError(f"unknown {cls.__name__} keys: {sorted(unknown)}")
    for f in fields(cls):
        if f.name in d and isinstance(d[f.name], list) and isinstance(f.default, tuple):
            d[f.name] = tuple(d[f.name])
    return cls(**d)


@dataclass(frozen=True)
class EncoderConfig:
    patch_size: int = 14
    embed_dim: int = 192
    depth: int = 4
    heads: int = 3
    register_tokens: int = 4
    input_size: int = 126
    stem_channels: tuple = (32, 64)
    mlp_ratio: float = 4.0

    def __post_init__(self):
        if self.input_size % self.patch_size:
            raise ValueError(f"input_size {self.input_size} is not divisible by patch_size {self.patch_size}")
        if self.patch_size % 2:
            raise ValueError("patch_size must be even (patchify stride p/2, then a stride-2 merge)")
        if self.embed_dim % self.heads:
            raise ValueError("embed_dim must be divisible by heads")

    @property
    def grid(self) -> int:
        return self.input_size // self.patch_size

    @classmethod
    def from_dict(cls, d):
        return _from_dict(cls, d)


@dataclass(frozen=True)
class DadConfig:
    dilations: tuple = (1, 2, 3, 6)
    angles: tuple = (0, 45, 90, 135)
    branch_channels: int = 64
    deform_channels: int = 64
    kernel: int = 3
    hidden: int = 512
    mask_logit_init: float = 8.0

    @property
    def head_width(self) -> int:
        return len(self.angles) * self.deform_channels

    @classmethod
    def from_dict(cls, d):
        return _from_dict(cls, d)


@dataclass(frozen=True)
class MlpRegressorConfig:
    reduce_channels: int = 2
    hidden: int = 256

    @classmethod
    def from_dict(cls, d):
        return _from_dict(cls, d)


@dataclass(frozen=True)
class ModelConfig:
    head: str = "dad"  # dad | mlp (arm heads; wrist heads are always MLP-regressors)
    decoupled: bool = True
    shared_encoder: bool = False
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    dad: DadConfig = field(default_factory=DadConfig)
    mlp: MlpRegressorConfig = field(default_factory=MlpRegressorConfig)

    def __post_init__(self):
        if self.head not in ("dad", "mlp"):
            raise ValueError(f"head must be 'dad' or 'mlp', got {self.head!r}")

    @property
    def variant(self) -> str:
        return f"{self.head}-{'decoupled' if self.decoupled else 'coupled'}"

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        d = dict(d or {})
        sub = {"encoder": EncoderConfig, "dad": DadConfig, "mlp": MlpRegressorConfig}
        for k, c in sub.items():
            if k in d and isinstance(d[k], dict):
                d[k] = c.from_dict(d[k])
        return _from_dict(cls, d)

    def hash(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()[:16]


def default_loss_weights() -> tuple:
    w = [1.0] * 14
    for i in WEIGHTED_INDICES:
        w[i] = 2.0
    return tuple(w)


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 8
    iterations: int = 96000
    betas: tuple = (0.9, 0.999)
    eps: float = 0.01
    weight_decay: float = 0.01
    lr_encoder: float = 5e-5
    lr_head: float = 5e-4
    warmup: int = 9600
    loss_beta: float = 0.1
    loss_weights: tuple = field(default_factory=default_loss_weights)
    val_fraction: float = 0.05
    val_every: int = 1000
    val_samples: int = 256
    checkpoint_every: int = 0  # 0: only at the end

    def __post_init__(self):
        if self.iterations <= 0:
            raise ValueError("iterations must be > 0")
        if not 0 <= self.warmup < self.iterations:
            raise ValueError("warmup must be in [0, iterations)")
        if len(self.loss_weights) != 14:
            raise ValueError("loss_weights needs 14 entries")

    def scaled(self, iterations: int) -> "TrainConfig":
        """Same schedule shape at a different budget (warmup kept at 10%)."""
        d = asdict(self)
        d.update(iterations=iterations, warmup=int(round(self.warmup * iterations / self.iterations)))
        d["betas"], d["loss_weights"] = tuple(d["betas"]), tuple(d["loss_weights"])
        return TrainConfig(**d)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        return _from_dict(cls, d)


@dataclass(frozen=True)
class AugmentConfig:
    brightness: tuple = (0.8, 1.2)
    contrast: tuple = (0.7, 1.3)
    saturation: tuple = (0.5, 1.5)
    hue: float = 0.05
    background_prob: float = 0.4
    sharpness: float = 1.8
    sharpness_prob: float = 0.7
    mean: tuple = (0.485, 0.456, 0.406)
    std: tuple = (0.229, 0.224, 0.225)
    arm_threshold: int = 48  # max channel value of arm-colored pixels

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        return _from_dict(cls, d)
