"""Run configuration shared by the command-line stages."""

from __future__ import annotations

import copy
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .atara.ppo import PpoConfig
from .atara.reach import ReachEnvConfig
from .atara.sampling import TrajectoryConfig
from .eval import ThresholdSpec
from .idm.config import AugmentConfig, ModelConfig, TrainConfig
from .kinematics import ChainConfigError, default_chain_path, load_chain

SNAPSHOT = "resolved_config.yaml"


class ConfigError(ValueError):
    """Invalid or unreadable run configuration."""


def _defaults() -> dict:
    return {
        "seed": 0,
        "chains": {"left": str(default_chain_path("left")), "right": str(default_chain_path("right"))},
        "rl": {"budget": 2_000_000, "ppo": PpoConfig().to_dict(), "env": ReachEnvConfig().to_dict()},
        "generation": {
            "steps": 610_000,
            "image_size": 128,
            "targets_per_trajectory": 24,
            "clutter_seed": 0,
            "workers": 1,
            "trajectory": TrajectoryConfig().to_dict(),
        },
        "idm": {
            "model": ModelConfig().to_dict(),
            "train": TrainConfig().to_dict(),
            "augment": AugmentConfig().to_dict(),
        },
        "eval": {"thresholds": ThresholdSpec().to_dict(), "limit": None},
        "replay": {"episodes": 10, "steps_per_substep": 12, "seed": 0},
    }


def _merge(base: dict, over: dict, where: str = "") -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if k not in out:
            raise ConfigError(f"unknown config key {where}{k!r}")
        if isinstance(out[k], dict) and isinstance(v, dict) and k not in ("chains",):
            out[k] = _merge(out[k], v, f"{where}{k}.")
        else:
            out[k] = v
    return out


def _plain(x):
    """Tuples -> lists so the YAML snapshot stays plain."""
    if isinstance(x, dict):
        return {k: _plain(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_plain(v) for v in x]
    return x


@dataclass
class RunConfig:
    data: dict = field(default_factory=_defaults)

    @classmethod
    def load(cls, path=None, overrides: dict | None = None) -> "RunConfig":
        data = _defaults()
        if path is not None:
            p = Path(path)
            try:
                loaded = yaml.safe_load(p.read_text()) or {}
            except OSError as exc:
                raise ConfigError(f"cannot read config {p}: {exc}") from exc
            except yaml.YAMLError as exc:
                raise ConfigError(f"malformed config {p}: {exc}") from exc
            if not isinstance(loaded, dict):
                raise ConfigError(f"config {p} must be a mapping")
            data = _merge(data, loaded)
        if overrides:
            data = _merge(data, overrides)
        cfg = cls(_plain(data))
        cfg.validate()
        return cfg

    def __getitem__(self, key):
        return self.data[key]

    @property
    def seed(self) -> int:
        return int(self.data["seed"])

    def chains(self):
        try:
            return load_chain(self.data["chains"]["left"]), load_chain(self.data["chains"]["right"])
        except FileNotFoundError as exc:
            raise ConfigError(f"chain file not found: {exc.filename or exc}") from exc
        except (ChainConfigError, KeyError, TypeError) as exc:
            raise ConfigError(f"bad chain description: {exc}") from exc

    def ppo(self) -> PpoConfig:
        return PpoConfig.from_dict(self.data["rl"]["ppo"])

    def env(self) -> ReachEnvConfig:
        return ReachEnvConfig.from_dict(self.data["rl"]["env"])

    def trajectory(self) -> TrajectoryConfig:
        return TrajectoryConfig.from_dict(self.data["generation"]["trajectory"])

    def model(self) -> ModelConfig:
        return ModelConfig.from_dict(self.data["idm"]["model"])

    def train(self) -> TrainConfig:
        return TrainConfig.from_dict(self.data["idm"]["train"])

    def augment(self) -> AugmentConfig:
        return AugmentConfig.from_dict(self.data["idm"]["augment"])

    def thresholds(self) -> ThresholdSpec:
        return ThresholdSpec.from_dict(self.data["eval"]["thresholds"])

    def validate(self):
        try:
            self.ppo(), self.env(), self.trajectory(), self.model(), self.train(), self.augment(), self.thresholds()
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc
        if int(self.data["generation"]["image_size"]) < 16:
            raise ConfigError("generation.image_size must be >= 16")

    def snapshot(self, out_dir) -> Path:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        path = out / SNAPSHOT
        path.write_text(yaml.safe_dump(self.data, sort_keys=True))
        return path
