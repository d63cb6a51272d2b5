"""Deterministic flat-shaded rendering of the two arms into three camera views.

Arms are drawn as anti-aliased capsules (painter's algorithm, far to near)
in near-black shades over a light background. Camera frames follow the
pinhole convention: +x right, +y down, +z along the optical axis. Pixel
(row i, col j) has its center at (u=j, v=i).
"""

from __future__ import annotations

from dataclasses import dataclass, field, asdict
from functools import lru_cache

import numpy as np

from . import kernels
from .kinematics import KinematicChain, Pose3, link_frames

NEAR_PLANE = 0.02

# Part geometry in the final wrist frame (x = approach direction).
WRIST_BODY = ((0.0, 0.0, 0.0), (0.04, 0.0, 0.0), 0.028)
CAMERA_FIN = ((0.0, 0.0, 0.0), (-0.03, 0.0, 0.04), 0.012)
JAW_BASE, JAW_TIP, JAW_RADIUS = 0.04, 0.10, 0.007
JAW_MIN_HALF_GAP = 0.008

PART_SHADES = {
    "pedestal": 18,
    "upper_arm": 10,
    "forearm": 24,
    "wrist": 6,
    "fin": 30,
    "palm": 14,
    "jaw": 26,
}
PART_RADII = {"pedestal": 0.035, "upper_arm": 0.028, "forearm": 0.024}


@dataclass(frozen=True)
class CameraSpec:
    pose: Pose3  # camera-to-parent transform
    fx: float
    fy: float
    cx: float
    cy: float
    image_size: tuple[int, int]  # (H, W)
    attached_frame: str = "world"  # world | left_wrist | right_wrist

    def __post_init__(self):
        h, w = self.image_size
        if h <= 0 or w <= 0:
            raise ValueError(f"image_size must be positive, got {self.image_size}")
        if self.attached_frame not in ("world", "left_wrist", "right_wrist"):
            raise ValueError(f"unknown attached_frame {self.attached_frame!r}")

    def to_dict(self) -> dict:
        return {
            "position": [float(v) for v in self.pose.position],
            "orientation": [float(v) for v in self.pose.orientation],
            "intrinsics": {"fx": self.fx, "fy": self.fy, "cx": self.cx, "cy": self.cy},
            "image_size": list(self.image_size),
            "attached_frame": self.attached_frame,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CameraSpec":
        k = d["intrinsics"]
        return cls(
            Pose3(np.array(d["position"]), np.array(d["orientation"])),
            float(k["fx"]),
            float(k["fy"]),
            float(k["cx"]),
            float(k["cy"]),
            tuple(int(v) for v in d["image_size"]),
            d.get("attached_frame", "world"),
        )


@dataclass(frozen=True)
class SceneConfig:
    background: tuple[int, int, int] = (235, 235, 228)
    clutter_seed: int | None = None
    brightness: float = 1.0
    arm_shades: dict = field(default_factory=lambda: dict(PART_SHADES))

    def __post_init__(self):
        # every arm shade must stay far below the segmentation's near-black cutoff
        if max(self.arm_shades.values()) * self.brightness > 48:
            raise ValueError("arm shades must stay near-black (<= 48 after brightness)")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["background"] = list(self.background)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SceneConfig":
        return cls(
            tuple(d.get("background", (235, 235, 228))),
            d.get("clutter_seed"),
            float(d.get("brightness", 1.0)),
            dict(d.get("arm_shades", PART_SHADES)),
        )


@dataclass(frozen=True)
class ObservationSet:
    high: np.ndarray
    left_wrist: np.ndarray
    right_wrist: np.ndarray

    def __post_init__(self):
        shapes = {self.high.shape, self.left_wrist.shape, self.right_wrist.shape}
        if len(shapes) != 1:
            raise ValueError(f"views must share one resolution, got {shapes}")

    @property
    def resolution(self) -> tuple[int, int]:
        return self.high.shape[:2]


def look_at(eye, target, up=(0.0, 0.0, 1.0)) -> Pose3:
    """Camera pose at ``eye`` with its optical axis through ``target``."""
    eye = np.asarray(eye, dtype=float)
    z = np.asarray(target, dtype=float) - eye
    z /= np.linalg.norm(z)
    x = np.cross(z, up)
    if np.linalg.norm(x) < 1e-9:
        x = np.cross(z, (1.0, 0.0, 0.0))
    x /= np.linalg.norm(x)
    y = np.cross(z, x)
    return Pose3.from_matrix(eye, np.stack([x, y, z], axis=1))


def default_cameras(size: int = 128) -> dict[str, CameraSpec]:
    """High rear camera seeing both arms plus one camera on each wrist."""
    s = float(size)
    high = CameraSpec(
        look_at((0.02, 0.0, 1.42), (0.56, 0.0, 0.78)),
        fx=0.9 * s,
        fy=0.9 * s,
        cx=(s - 1) / 2,
        cy=(s - 1) / 2,
        image_size=(size, size),
    )
    # above the palm, looking down the jaws
    wrist_pose = look_at((-0.01, 0.0, 0.085), (0.22, 0.0, -0.02), up=(1.0, 0.0, 0.0))
    wrist = dict(pose=wrist_pose, fx=0.7 * s, fy=0.7 * s, cx=(s - 1) / 2, cy=(s - 1) / 2, image_size=(size, size))
    return {
        "high": high,
        "left_wrist": CameraSpec(attached_frame="left_wrist", **wrist),
        "right_wrist": CameraSpec(attached_frame="right_wrist", **wrist),
    }


def camera_world_matrix(camera: CameraSpec, wrist_frames: dict | None = None) -> np.ndarray:
    """4x4 camera-to-world transform."""
    local = camera.pose.as_matrix()
    if camera.attached_frame == "world":
        return local
    if wrist_frames is None or camera.attached_frame not in wrist_frames:
        raise ValueError(f"camera attached to {camera.attached_frame} needs that frame")
    return wrist_frames[camera.attached_frame] @ local


def project_point(camera: CameraSpec, world_point, parent_frame=None):
    """Pinhole projection; returns ``(u, v)`` or ``None`` when out of frame.

    ``parent_frame`` (4x4) is required for wrist-attached cameras.
    """
    if camera.attached_frame == "world":
        cam_to_world = camera.pose.as_matrix()
    else:
        if parent_frame is None:
            raise ValueError("wrist camera projection needs the parent frame")
        cam_to_world = np.asarray(parent_frame) @ camera.pose.as_matrix()
    rot = cam_to_world[:3, :3]
    pc = rot.T @ (np.asarray(world_point, dtype=float) - cam_to_world[:3, 3])
    if pc[2] <= 0:
        return None
    u = camera.fx * pc[0] / pc[2] + camera.cx
    v = camera.fy * pc[1] / pc[2] + camera.cy
    h, w = camera.image_size
    if not (-0.5 <= u < w - 0.5 and -0.5 <= v < h - 0.5):
        return None
    return float(u), float(v)


def wrist_frame(chain: KinematicChain, joints) -> np.ndarray:
    points, rots = link_frames(chain, joints)
    t = np.eye(4)
    t[:3, :3] = rots[-1]
    t[:3, 3] = points[-1]
    return t


def arm_capsules(chain: KinematicChain, joints, gripper: float, shades=PART_SHADES):
    """World-space capsules ``(p0, p1, radius, shade)`` for one arm."""
    points, rots = link_frames(chain, joints)
    base, shoulder = points[0], points[1]
    elbow = points[3]
    wc = points[-1]
    rot = rots[-1]
    caps = [
        (base, shoulder, PART_RADII["pedestal"], shades["pedestal"]),
        (shoulder, elbow, PART_RADII["upper_arm"], shades["upper_arm"]),
        (elbow, wc, PART_RADII["forearm"], shades["forearm"]),
    ]

    def w(p):
        return wc + rot @ np.asarray(p, dtype=float)

    caps.append((w(WRIST_BODY[0]), w(WRIST_BODY[1]), WRIST_BODY[2], shades["wrist"]))
    caps.append((w(CAMERA_FIN[0]), w(CAMERA_FIN[1]), CAMERA_FIN[2], shades["fin"]))
    half = JAW_MIN_HALF_GAP + 0.5 * (chain.gripper_range[1] - chain.gripper_range[0]) * float(np.clip(gripper, 0.0, 1.0))
    caps.append((w((JAW_BASE, -half, 0.0)), w((JAW_BASE, half, 0.0)), 0.009, shades["palm"]))
    for sgn in (-1.0, 1.0):
        caps.append((w((JAW_BASE, sgn * half, 0.0)), w((JAW_TIP, sgn * half, 0.0)), JAW_RADIUS, shades["jaw"]))
    return caps


@lru_cache(maxsize=16)
def _background(h: int, w: int, color: tuple, clutter_seed: int | None) -> np.ndarray:
    img = np.empty((h, w, 3), dtype=np.float32)
    img[:] = np.asarray(color, dtype=np.float32)
    if clutter_seed is not None:
        rng = np.random.default_rng(clutter_seed)
        for _ in range(12):
            y0, x0 = rng.integers(0, h), rng.integers(0, w)
            hh, ww = rng.integers(h // 16, h // 3), rng.integers(w // 16, w // 3)
            img[y0 : y0 + hh, x0 : x0 + ww] = rng.integers(110, 256, size=3)
    img.setflags(write=False)
    return img


def _project_capsules(caps, cam_to_world: np.ndarray, camera: CameraSpec):
    rot, org = cam_to_world[:3, :3], cam_to_world[:3, 3]
    rows, shades, depths = [], [], []
    for p0, p1, radius, shade in caps:
        a = rot.T @ (np.asarray(p0) - org)
        b = rot.T @ (np.asarray(p1) - org)
        if a[2] < NEAR_PLANE and b[2] < NEAR_PLANE:
            continue
        # clip the segment to the near plane
        if a[2] < NEAR_PLANE:
            a = b + (a - b) * (b[2] - NEAR_PLANE) / (b[2] - a[2])
        elif b[2] < NEAR_PLANE:
            b = a + (b - a) * (a[2] - NEAR_PLANE) / (a[2] - b[2])
        u0, v0 = camera.fx * a[0] / a[2] + camera.cx, camera.fy * a[1] / a[2] + camera.cy
        u1, v1 = camera.fx * b[0] / b[2] + camera.cx, camera.fy * b[1] / b[2] + camera.cy
        rows.append((u0, v0, u1, v1, camera.fx * radius / a[2], camera.fx * radius / b[2]))
        shades.append(shade)
        depths.append(0.5 * (a[2] + b[2]))
    if not rows:
        return np.zeros((0, 6)), np.zeros((0, 3))
    order = np.argsort(-np.asarray(depths), kind="stable")
    caps_px = np.ascontiguousarray(np.asarray(rows, dtype=np.float64)[order])
    colors = np.repeat(np.asarray(shades, dtype=np.float64)[order, None], 3, axis=1)
    return caps_px, np.ascontiguousarray(colors)


def render_camera(camera: CameraSpec, caps, scene: SceneConfig, wrist_frames=None) -> np.ndarray:
    h, w = camera.image_size
    img = _background(h, w, tuple(int(c) for c in scene.background), scene.clutter_seed).copy()
    caps_px, colors = _project_capsules(caps, camera_world_matrix(camera, wrist_frames), camera)
    if len(caps_px):
        kernels.draw_capsules(img, caps_px, colors)
    if scene.brightness != 1.0:
        img *= scene.brightness
    return np.clip(np.rint(img), 0, 255).astype(np.uint8)


def render_views(chain_l, joints_l, chain_r, joints_r, grippers, cameras, scene=None) -> ObservationSet:
    """Render the high and both wrist views for one dual-arm state."""
    scene = scene or SceneConfig()
    if isinstance(cameras, dict):
        cams = (cameras["high"], cameras["left_wrist"], cameras["right_wrist"])
    else:
        cams = tuple(cameras)
    caps = arm_capsules(chain_l, joints_l, grippers[0], scene.arm_shades) + arm_capsules(
        chain_r, joints_r, grippers[1], scene.arm_shades
    )
    frames = {"left_wrist": wrist_frame(chain_l, joints_l), "right_wrist": wrist_frame(chain_r, joints_r)}
    views = [render_camera(cam, caps, scene, frames) for cam in cams]
    return ObservationSet(*views)


def render_action(chains, action, cameras, scene=None) -> ObservationSet:
    """Render a 14-dim joint vector (layout: L joints, L grip, R joints, R grip)."""
    a = np.asarray(action, dtype=float)
    return render_views(chains[0], a[0:6], chains[1], a[7:13], (a[6], a[13]), cameras, scene)
