"""Image preprocessing, training augmentation and the weighted smooth-L1 loss."""

from __future__ import annotations

import math

import numpy as np
import torch
import torch.nn.functional as F

from ..renderer import ObservationSet
from ..segmentation import SeedSpec, split_observation
from .config import AugmentConfig


def resize_uint8(image: np.ndarray, size: int) -> np.ndarray:
    """Antialiased bilinear resize of an (H, W, 3) uint8 image to (size, size, 3)."""
    t = torch.from_numpy(np.require(image, requirements=("C", "W"))).permute(2, 0, 1)[None].float()
    if t.shape[-2:] != (size, size):
        t = F.interpolate(t, size=(size, size), mode="bilinear", align_corners=False, antialias=True)
    return t[0].permute(1, 2, 0).round().clamp(0, 255).to(torch.uint8).numpy()


def model_views(obs: ObservationSet, seeds: SeedSpec, size: int, decoupled: bool = True):
    """Resized uint8 inputs for each sub-model plus the split method used."""
    if not decoupled:
        return {"high": resize_uint8(obs.high, size)}, None
    left, right, res = split_observation(obs, seeds)
    return {
        "left": resize_uint8(left, size),
        "right": resize_uint8(right, size),
        "left_wrist": resize_uint8(obs.left_wrist, size),
        "right_wrist": resize_uint8(obs.right_wrist, size),
    }, res


def to_tensor(images: np.ndarray) -> torch.Tensor:
    """(..., H, W, 3) uint8 -> (..., 3, H, W) float in [0, 1]."""
    t = torch.from_numpy(np.ascontiguousarray(images)).float() / 255.0
    return t.movedim(-1, -3)


def normalize(x: torch.Tensor, cfg: AugmentConfig) -> torch.Tensor:
    mean = torch.tensor(cfg.mean, dtype=x.dtype).view(3, 1, 1)
    std = torch.tensor(cfg.std, dtype=x.dtype).view(3, 1, 1)
    return (x - mean) / std


def eval_transform(images: np.ndarray, cfg: AugmentConfig) -> torch.Tensor:
    return normalize(to_tensor(images), cfg)


def _gray(x: torch.Tensor) -> torch.Tensor:
    return (0.299 * x[:, 0] + 0.587 * x[:, 1] + 0.114 * x[:, 2]).unsqueeze(1)


def _shift_hue(x: torch.Tensor, shift: torch.Tensor) -> torch.Tensor:
    """Rotate chroma in YIQ space by ``shift`` turns (per image)."""
    m = torch.tensor([[0.299, 0.587, 0.114], [0.596, -0.274, -0.322], [0.211, -0.523, 0.312]], dtype=x.dtype)
    yiq = torch.einsum("ij,bjhw->bihw", m, x)
    a = 2 * math.pi * shift.view(-1, 1, 1)
    c, s = torch.cos(a), torch.sin(a)
    i, q = yiq[:, 1], yiq[:, 2]
    yiq = torch.stack([yiq[:, 0], c * i - s * q, s * i + c * q], dim=1)
    return torch.einsum("ij,bjhw->bihw", torch.linalg.inv(m), yiq)


def _sharpen(x: torch.Tensor, factor: float) -> torch.Tensor:
    """Blend with a smoothed copy (3x3 kernel, centre weight 5); borders kept."""
    k = torch.tensor([[1.0, 1.0, 1.0], [1.0, 5.0, 1.0], [1.0, 1.0, 1.0]], dtype=x.dtype) / 13.0
    blur = F.conv2d(x, k.view(1, 1, 3, 3).repeat(3, 1, 1, 1), padding=1, groups=3)
    out = blur + factor * (x - blur)
    out[..., 0, :], out[..., -1, :] = x[..., 0, :], x[..., -1, :]
    out[..., :, 0], out[..., :, -1] = x[..., :, 0], x[..., :, -1]
    return out


def augment(images: np.ndarray, cfg: AugmentConfig, generator: torch.Generator, train: bool = True) -> torch.Tensor:
    """Training augmentation on a batch of (B, H, W, 3) uint8 images.

    Color jitter, background randomization (non-arm pixels replaced by
    uniform noise), sharpening, then normalization. ``train=False`` only
    normalizes.
    """
    x = to_tensor(images)
    if x.ndim == 3:
        x = x[None]
    if not train:
        return normalize(x, cfg)
    b = x.shape[0]

    def u(lo, hi):
        return lo + (hi - lo) * torch.rand(b, generator=generator)

    arm = (torch.from_numpy(np.ascontiguousarray(images)).reshape(b, *images.shape[-3:]).amax(-1)
           <= cfg.arm_threshold).unsqueeze(1)
    bri, con, sat = u(*cfg.brightness), u(*cfg.contrast), u(*cfg.saturation)
    hue = u(-cfg.hue, cfg.hue)
    bg = torch.rand(b, generator=generator) < cfg.background_prob
    sharp = torch.rand(b, generator=generator) < cfg.sharpness_prob
    noise = torch.rand(x.shape, generator=generator)

    x = (x * bri.view(b, 1, 1, 1)).clamp(0, 1)
    mean = _gray(x).mean(dim=(-2, -1), keepdim=True)
    x = ((x - mean) * con.view(b, 1, 1, 1) + mean).clamp(0, 1)
    g = _gray(x)
    x = ((x - g) * sat.view(b, 1, 1, 1) + g).clamp(0, 1)
    x = _shift_hue(x, hue).clamp(0, 1)
    x = torch.where(bg.view(b, 1, 1, 1) & ~arm, noise, x)
    if sharp.any():
        x[sharp] = _sharpen(x[sharp], cfg.sharpness).clamp(0, 1)
    return normalize(x, cfg)


def weighted_smooth_l1(pred, target, weights, beta: float = 0.1):
    """Per-dim 0.5 w d^2 / beta if |d| < beta else w (|d| - 0.5 beta); summed over dims, mean over batch."""
    if beta <= 0:
        raise ValueError("beta must be > 0")
    if isinstance(pred, torch.Tensor):
        d = (pred - torch.as_tensor(target, dtype=pred.dtype)).abs()
        w = torch.as_tensor(weights, dtype=pred.dtype)
        per = torch.where(d < beta, 0.5 * d * d / beta, d - 0.5 * beta) * w
        return per.sum(-1).mean() if per.ndim > 1 else per.sum(-1)
    d = np.abs(np.asarray(pred, dtype=float) - np.asarray(target, dtype=float))
    w = np.asarray(weights, dtype=float)
    per = np.where(d < beta, 0.5 * d * d / beta, d - 0.5 * beta) * w
    return float(per.sum(-1).mean()) if per.ndim > 1 else float(per.sum(-1))
