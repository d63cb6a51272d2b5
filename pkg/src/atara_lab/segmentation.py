"""Arm-decoupling operator: split the high view into per-arm crops.

Each arm's silhouette is flood-filled from its (static) pedestal pixel. When
the fill fails, the arms' column intervals overlap, or a silhouette touches
the image border, the split falls back to fixed overlapping crops of the
left and right ``ceil(3W/5)`` columns.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import kernels
from .kinematics import KinematicChain, link_frames
from .renderer import CameraSpec, ObservationSet, project_point

NEAR_BLACK = 48  # max channel value treated as arm-colored
DEFAULT_TOLERANCE = 30


@dataclass(frozen=True)
class SeedSpec:
    left_seed: tuple[int, int]  # (u, v) = (column, row)
    right_seed: tuple[int, int]
    color_tolerance: int = DEFAULT_TOLERANCE

    def __post_init__(self):
        if self.color_tolerance < 0:
            raise ValueError("color_tolerance must be >= 0")

    def to_dict(self) -> dict:
        return {"left_seed": list(self.left_seed), "right_seed": list(self.right_seed),
                "color_tolerance": self.color_tolerance}

    @classmethod
    def from_dict(cls, d: dict) -> "SeedSpec":
        return cls(tuple(d["left_seed"]), tuple(d["right_seed"]), int(d.get("color_tolerance", DEFAULT_TOLERANCE)))


@dataclass(frozen=True)
class SplitResult:
    method: str  # "flood_fill" | "fallback"
    split_column: int | None
    left_crop: np.ndarray
    right_crop: np.ndarray
    left_columns: tuple[int, int]  # [start, stop) in the source image
    right_columns: tuple[int, int]
    reason: str = ""


def seeds_for_camera(camera: CameraSpec, chains: tuple[KinematicChain, KinematicChain],
                     tolerance: int = DEFAULT_TOLERANCE, height: float = 0.5) -> SeedSpec:
    """Pedestal seed pixels: the projection of a point ``height`` up each static pedestal."""
    seeds = []
    for chain in chains:
        pts, _ = link_frames(chain, chain.home)
        base, shoulder = pts[0], pts[1]  # J1 only spins the pedestal about its own axis
        p = base + height * (shoulder - base)
        uv = project_point(camera, p)
        if uv is None:
            raise ValueError(f"pedestal of {chain.name or 'arm'} projects outside the high view")
        seeds.append((int(round(uv[0])), int(round(uv[1]))))
    return SeedSpec(seeds[0], seeds[1], tolerance)


def flood_fill_mask(image: np.ndarray, seed, tolerance: int = DEFAULT_TOLERANCE):
    """4-connected region within ``tolerance`` per channel of the seed color.

    ``seed`` is ``(u, v)``. Returns ``None`` (failure) when the seed pixel is
    not near-black, i.e. no arm is present there.
    """
    img = np.ascontiguousarray(image, dtype=np.uint8)
    if img.ndim == 2:
        img = np.ascontiguousarray(np.repeat(img[:, :, None], 3, axis=2))
    h, w = img.shape[:2]
    u, v = int(seed[0]), int(seed[1])
    if not (0 <= u < w and 0 <= v < h):
        raise ValueError(f"seed {(u, v)} outside image of size {(w, h)}")
    if int(img[v, u].max()) > NEAR_BLACK:
        return None
    return np.asarray(kernels.flood_fill(img, v, u, int(tolerance)), dtype=bool)


def _columns(mask: np.ndarray):
    cols = np.flatnonzero(mask.any(axis=0))
    return (int(cols[0]), int(cols[-1])) if len(cols) else None


def compute_split_line(mask_l, mask_r):
    """Column midway between the left mask's right edge and the right mask's left edge.

    Returns ``None`` when either mask is empty or their column ranges overlap.
    """
    if mask_l is None or mask_r is None:
        return None
    if mask_l.shape != mask_r.shape:
        raise ValueError("masks must share one shape")
    cl, cr = _columns(mask_l), _columns(mask_r)
    if cl is None or cr is None or cl[1] >= cr[0]:
        return None
    # rounding up keeps the split strictly right of mask_L and at W/2 on mirrored input
    return int(math.ceil((cl[1] + cr[0]) / 2.0))


def fallback_width(width: int) -> int:
    return int(math.ceil(3 * width / 5))


def _touches_border(mask: np.ndarray) -> bool:
    return bool(mask[0].any() or mask[-1].any() or mask[:, 0].any() or mask[:, -1].any())


def split_high_view(image: np.ndarray, seeds: SeedSpec) -> SplitResult:
    h, w = image.shape[:2]
    mask_l = flood_fill_mask(image, seeds.left_seed, seeds.color_tolerance)
    mask_r = flood_fill_mask(image, seeds.right_seed, seeds.color_tolerance)
    reason = ""
    split = None
    if mask_l is None or mask_r is None:
        reason = "seed not on an arm"
    elif mask_l[seeds.right_seed[1], seeds.right_seed[0]]:
        reason = "arms merged into one region"
    elif _touches_border(mask_l) or _touches_border(mask_r):
        reason = "arm leaves the image"
    else:
        split = compute_split_line(mask_l, mask_r)
        if split is None:
            reason = "arm column ranges overlap"
    if split is not None:
        return SplitResult("flood_fill", split, image[:, :split], image[:, split:], (0, split), (split, w))
    fw = fallback_width(w)
    return SplitResult("fallback", None, image[:, :fw], image[:, w - fw:], (0, fw), (w - fw, w), reason)


def split_observation(obs: ObservationSet, seeds: SeedSpec):
    """Returns ``(left_crop, right_crop, SplitResult)`` for the high view."""
    res = split_high_view(obs.high, seeds)
    return res.left_crop, res.right_crop, res


@dataclass(frozen=True)
class WristCrop:
    view: str  # "left_wrist" | "right_wrist"
    image: np.ndarray


def wrist_crops(obs: ObservationSet) -> tuple[WristCrop, WristCrop]:
    """The two wrist views, labelled, for the gripper heads."""
    return WristCrop("left_wrist", obs.left_wrist), WristCrop("right_wrist", obs.right_wrist)
