"""End-to-end inference: observation -> split -> heads -> 14-dim action."""

from __future__ import annotations

import numpy as np
import torch

from ..renderer import ObservationSet
from ..segmentation import SeedSpec
from .config import AugmentConfig
from .model import IdmModel, clamp_grippers
from .preprocess import augment, model_views


class ResolutionError(ValueError):
    """Observation resolution differs from the one the model was trained on."""


class IdmPredictor:
    """Wraps a trained :class:`IdmModel` with its split seeds and input resolution."""

    def __init__(self, model: IdmModel, seeds: SeedSpec, resolution: tuple[int, int] | None = None,
                 aug_cfg: AugmentConfig | None = None):
        self.model = model.eval()
        self.seeds = seeds
        self.resolution = tuple(resolution) if resolution is not None else None
        self.aug = aug_cfg or AugmentConfig()
        self.size = model.cfg.encoder.input_size
        self.split_counts = {"flood_fill": 0, "fallback": 0}

    def _check(self, obs: ObservationSet):
        if self.resolution is not None and tuple(obs.resolution) != self.resolution:
            raise ResolutionError(f"model expects {self.resolution} frames, got {tuple(obs.resolution)}")

    @torch.no_grad()
    def predict_batch(self, frames) -> np.ndarray:
        frames = list(frames)
        if not frames:
            return np.zeros((0, 14))
        per = {k: [] for k in self.model.inputs}
        for obs in frames:
            self._check(obs)
            views, res = model_views(obs, self.seeds, self.size, self.model.cfg.decoupled)
            if res is not None:
                self.split_counts[res.method] += 1
            for k in per:
                per[k].append(views[k])
        batch = {k: augment(np.stack(v), self.aug, None, train=False) for k, v in per.items()}
        return clamp_grippers(self.model(batch)).numpy().astype(np.float64)

    def predict(self, obs: ObservationSet, index=None) -> np.ndarray:
        return self.predict_batch([obs])[0]

    def predict_arm(self, crop: np.ndarray, side: str) -> np.ndarray:
        """Six joint values from one high-view crop (``side`` is 'left' or 'right')."""
        from .preprocess import resize_uint8

        x = augment(resize_uint8(crop, self.size)[None], self.aug, None, train=False)
        sub = self.model.left_arm if side == "left" else self.model.right_arm
        with torch.no_grad():
            return sub(x)[0].numpy().astype(np.float64)

    def predict_gripper(self, wrist_image: np.ndarray, side: str) -> float:
        """Gripper opening in [0, 1] from one wrist view."""
        from .preprocess import resize_uint8

        x = augment(resize_uint8(wrist_image, self.size)[None], self.aug, None, train=False)
        sub = self.model.left_wrist if side == "left" else self.model.right_wrist
        with torch.no_grad():
            return float(sub(x)[0, 0].clamp(0.0, 1.0))


def load_predictor(path) -> IdmPredictor:
    """Rebuild a predictor from a checkpoint written by the training stage."""
    import json
    from pathlib import Path

    from ..kinematics import chain_from_dict
    from .train import load_checkpoint

    manifest = json.loads((Path(path) / "manifest.json").read_text())
    chains = (chain_from_dict(manifest["chains"]["left"]), chain_from_dict(manifest["chains"]["right"]))
    model = load_checkpoint(path, chains)
    seeds = SeedSpec.from_dict(manifest["split_seeds"])
    aug = AugmentConfig.from_dict(manifest["augment"]) if "augment" in manifest else None
    return IdmPredictor(model, seeds, manifest.get("resolution"), aug)
