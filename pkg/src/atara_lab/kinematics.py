"""Dual-arm kinematic model: chain description, forward kinematics, limits.

Conventions: joints in radians, positions in meters, world frame with +x
forward (away from the rear camera), +y to the left arm side, +z up.

Each link applies ``Trans(offset) @ Rot(rpy) @ Rot(axis, q) @ Trans(length * x)``
to the running frame. The end-effector (gripper base) is the origin of the
last frame.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

N_JOINTS = 6
GRIPPER_INDICES = (6, 13)
WEIGHTED_INDICES = (4, 11)
LEFT_JOINTS = slice(0, 6)
RIGHT_JOINTS = slice(7, 13)

_DATA_DIR = Path(__file__).resolve().parent / "data"


class ChainConfigError(ValueError):
    """Chain file could not be parsed; the message names the offending field."""


class ChainValidationError(ValueError):
    """Chain parsed but violates an invariant (e.g. lo >= hi)."""


def rotation_matrix(axis, angle):
    """Rodrigues rotation. ``angle`` may be an array; returns (..., 3, 3)."""
    axis = np.asarray(axis, dtype=float)
    axis = axis / np.linalg.norm(axis)
    angle = np.asarray(angle, dtype=float)
    c = np.cos(angle)[..., None, None]
    s = np.sin(angle)[..., None, None]
    x, y, z = axis
    k = np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])
    return np.eye(3) + s * k + (1.0 - c) * (k @ k)


def rpy_matrix(rpy):
    """Fixed-axis roll/pitch/yaw (URDF convention): Rz(yaw) Ry(pitch) Rx(roll)."""
    r, p, y = rpy
    return (
        rotation_matrix((0, 0, 1), y)
        @ rotation_matrix((0, 1, 0), p)
        @ rotation_matrix((1, 0, 0), r)
    )


def quat_from_matrix(m) -> np.ndarray:
    """Unit quaternion (w, x, y, z) from a rotation matrix, w >= 0."""
    m = np.asarray(m, dtype=float)
    tr = np.trace(m)
    if tr > 0:
        s = 2.0 * np.sqrt(tr + 1.0)
        q = [0.25 * s, (m[2, 1] - m[1, 2]) / s, (m[0, 2] - m[2, 0]) / s, (m[1, 0] - m[0, 1]) / s]
    elif m[0, 0] > m[1, 1] and m[0, 0] > m[2, 2]:
        s = 2.0 * np.sqrt(1.0 + m[0, 0] - m[1, 1] - m[2, 2])
        q = [(m[2, 1] - m[1, 2]) / s, 0.25 * s, (m[0, 1] + m[1, 0]) / s, (m[0, 2] + m[2, 0]) / s]
    elif m[1, 1] > m[2, 2]:
        s = 2.0 * np.sqrt(1.0 + m[1, 1] - m[0, 0] - m[2, 2])
        q = [(m[0, 2] - m[2, 0]) / s, (m[0, 1] + m[1, 0]) / s, 0.25 * s, (m[1, 2] + m[2, 1]) / s]
    else:
        s = 2.0 * np.sqrt(1.0 + m[2, 2] - m[0, 0] - m[1, 1])
        q = [(m[1, 0] - m[0, 1]) / s, (m[0, 2] + m[2, 0]) / s, (m[1, 2] + m[2, 1]) / s, 0.25 * s]
    q = np.array(q)
    q /= np.linalg.norm(q)
    return -q if q[0] < 0 else q


def matrix_from_quat(q) -> np.ndarray:
    w, x, y, z = np.asarray(q, dtype=float) / np.linalg.norm(q)
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)],
            [2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)],
            [2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)],
        ]
    )


@dataclass(frozen=True)
class Pose3:
    position: np.ndarray
    orientation: np.ndarray  # unit quaternion (w, x, y, z)

    def __post_init__(self):
        q = np.asarray(self.orientation, dtype=float)
        if abs(np.linalg.norm(q) - 1.0) > 1e-9:
            raise ValueError(f"quaternion norm {np.linalg.norm(q)!r} is not 1")
        object.__setattr__(self, "position", np.asarray(self.position, dtype=float))
        object.__setattr__(self, "orientation", q)

    @classmethod
    def from_matrix(cls, position, rotation) -> "Pose3":
        return cls(np.asarray(position, dtype=float), quat_from_matrix(rotation))

    @property
    def rotation(self) -> np.ndarray:
        return matrix_from_quat(self.orientation)

    def as_matrix(self) -> np.ndarray:
        t = np.eye(4)
        t[:3, :3] = self.rotation
        t[:3, 3] = self.position
        return t


@dataclass(frozen=True)
class Link:
    length: float
    rotation_axis: tuple[float, float, float]
    offset: tuple[float, float, float]
    rpy: tuple[float, float, float] = (0.0, 0.0, 0.0)
    name: str = ""


@dataclass(frozen=True)
class WorkspaceBox:
    x_range: tuple[float, float]
    y_range: tuple[float, float]
    z_range: tuple[float, float]

    def __post_init__(self):
        for axis, (lo, hi) in zip("xyz", self.ranges):
            if not lo < hi:
                raise ValueError(f"workspace {axis}_range needs lo < hi, got ({lo}, {hi})")

    @property
    def ranges(self):
        return (self.x_range, self.y_range, self.z_range)

    @property
    def lo(self) -> np.ndarray:
        return np.array([r[0] for r in self.ranges])

    @property
    def hi(self) -> np.ndarray:
        return np.array([r[1] for r in self.ranges])

    def contains(self, points) -> np.ndarray:
        p = np.asarray(points, dtype=float)
        return np.all((p >= self.lo) & (p <= self.hi), axis=-1)

    def clip_y(self, lo=None, hi=None) -> "WorkspaceBox":
        """Intersect with a y half-space; raises if the result is empty."""
        ylo, yhi = self.y_range
        if lo is not None:
            ylo = max(ylo, lo)
        if hi is not None:
            yhi = min(yhi, hi)
        return WorkspaceBox(self.x_range, (ylo, yhi), self.z_range)

    def sample(self, rng, n=None) -> np.ndarray:
        size = (3,) if n is None else (n, 3)
        return rng.uniform(self.lo, self.hi, size=size)


# Target EEF ranges for the two arms.
LEFT_WORKSPACE = WorkspaceBox((0.36, 0.7), (-0.08, 0.41), (0.6, 1.0))
RIGHT_WORKSPACE = WorkspaceBox((0.36, 0.7), (-0.41, 0.08), (0.6, 1.0))


@dataclass(frozen=True)
class KinematicChain:
    links: tuple[Link, ...]
    joint_limits: np.ndarray  # (6, 2) radians, closed intervals
    base_position: np.ndarray
    base_rpy: np.ndarray = field(default_factory=lambda: np.zeros(3))
    gripper_range: tuple[float, float] = (0.0, 0.08)
    home: np.ndarray = field(default_factory=lambda: np.zeros(N_JOINTS))
    name: str = "arm"

    def __post_init__(self):
        if len(self.links) != N_JOINTS:
            raise ChainValidationError(f"expected {N_JOINTS} revolute joints, got {len(self.links)}")
        lim = np.asarray(self.joint_limits, dtype=float).reshape(N_JOINTS, 2)
        for i, (lo, hi) in enumerate(lim):
            if not lo < hi:
                raise ChainValidationError(f"joint J{i + 1} limits need lo < hi, got [{lo}, {hi}]")
        if not self.gripper_range[0] < self.gripper_range[1]:
            raise ChainValidationError("gripper_range needs lo < hi")
        object.__setattr__(self, "joint_limits", lim)
        object.__setattr__(self, "base_position", np.asarray(self.base_position, dtype=float))
        object.__setattr__(self, "base_rpy", np.asarray(self.base_rpy, dtype=float))
        object.__setattr__(self, "home", np.asarray(self.home, dtype=float))

    @property
    def lo(self) -> np.ndarray:
        return self.joint_limits[:, 0]

    @property
    def hi(self) -> np.ndarray:
        return self.joint_limits[:, 1]

    @property
    def base_rotation(self) -> np.ndarray:
        return rpy_matrix(self.base_rpy)

    def with_base(self, position=None, rpy=None) -> "KinematicChain":
        return KinematicChain(
            self.links,
            self.joint_limits,
            self.base_position if position is None else position,
            self.base_rpy if rpy is None else rpy,
            self.gripper_range,
            self.home,
            self.name,
        )

    def clamp(self, joints) -> np.ndarray:
        return np.clip(joints, self.lo, self.hi)

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "base_pose": {
                "position": [float(v) for v in self.base_position],
                "rpy": [float(v) for v in self.base_rpy],
            },
            "gripper_range": [float(v) for v in self.gripper_range],
            "home": [float(v) for v in self.home],
            "links": [
                {
                    "name": link.name,
                    "length": float(link.length),
                    "rotation_axis": [float(v) for v in link.rotation_axis],
                    "offset": [float(v) for v in link.offset],
                    "rpy": [float(v) for v in link.rpy],
                    "limits": [float(v) for v in lim],
                }
                for link, lim in zip(self.links, self.joint_limits)
            ],
        }

    def content_hash(self) -> str:
        canonical = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode()).hexdigest()


def _vec(value, where, n=3):
    try:
        out = tuple(float(v) for v in value)
    except (TypeError, ValueError):
        raise ChainConfigError(f"{where}: expected {n} numbers, got {value!r}") from None
    if len(out) != n:
        raise ChainConfigError(f"{where}: expected {n} numbers, got {len(out)}")
    return out


def chain_from_dict(data: dict) -> KinematicChain:
    if not isinstance(data, dict):
        raise ChainConfigError("chain file: top level must be a mapping")
    raw_links = data.get("links")
    if not isinstance(raw_links, list):
        raise ChainConfigError("links: missing or not a list")
    if len(raw_links) != N_JOINTS:
        raise ChainValidationError(f"links: expected {N_JOINTS} joint entries, got {len(raw_links)}")
    links, limits = [], []
    for i, entry in enumerate(raw_links):
        where = f"links[{i}]"
        if not isinstance(entry, dict):
            raise ChainConfigError(f"{where}: expected a mapping")
        try:
            length = float(entry.get("length", 0.0))
        except (TypeError, ValueError):
            raise ChainConfigError(f"{where}.length: not a number") from None
        if "rotation_axis" not in entry:
            raise ChainConfigError(f"{where}.rotation_axis: missing")
        axis = np.array(_vec(entry["rotation_axis"], f"{where}.rotation_axis"))
        if np.linalg.norm(axis) == 0:
            raise ChainConfigError(f"{where}.rotation_axis: zero vector")
        axis = tuple(float(v) for v in axis / np.linalg.norm(axis))
        offset = _vec(entry.get("offset", (0, 0, 0)), f"{where}.offset")
        rpy = _vec(entry.get("rpy", (0, 0, 0)), f"{where}.rpy")
        if "limits" in entry:
            lim = _vec(entry["limits"], f"{where}.limits", 2)
        elif "limits_deg" in entry:
            lim = tuple(np.radians(_vec(entry["limits_deg"], f"{where}.limits_deg", 2)))
        else:
            raise ChainConfigError(f"{where}.limits: missing (give 'limits' or 'limits_deg')")
        links.append(Link(length, axis, offset, rpy, str(entry.get("name", f"J{i + 1}"))))
        limits.append(lim)
    base = data.get("base_pose", {}) or {}
    position = _vec(base.get("position", (0, 0, 0)), "base_pose.position")
    rpy = _vec(base.get("rpy", (0, 0, 0)), "base_pose.rpy")
    gripper = _vec(data.get("gripper_range", (0.0, 0.08)), "gripper_range", 2)
    limits = np.array(limits)
    if "home" in data:
        home = np.array(_vec(data["home"], "home", N_JOINTS))
    elif "home_deg" in data:
        home = np.radians(_vec(data["home_deg"], "home_deg", N_JOINTS))
    else:
        home = limits.mean(axis=1)
    return KinematicChain(
        tuple(links), limits, position, rpy, gripper, home, str(data.get("name", "arm"))
    )


def load_chain(spec_file) -> KinematicChain:
    path = Path(spec_file)
    if not path.exists():
        raise ChainConfigError(f"chain file not found: {path}")
    try:
        data = yaml.safe_load(path.read_text())
    except yaml.YAMLError as exc:
        raise ChainConfigError(f"chain file {path}: {exc}") from None
    return chain_from_dict(data)


def serialize_chain(chain: KinematicChain, path=None) -> str:
    text = yaml.safe_dump(chain.to_dict(), sort_keys=True)
    if path is not None:
        Path(path).write_text(text)
    return text


def default_chain_path(side: str = "left") -> Path:
    if side not in ("left", "right"):
        raise ValueError(f"side must be 'left' or 'right', got {side!r}")
    return _DATA_DIR / f"chain_{side}.yaml"


def default_chain(side: str = "left") -> KinematicChain:
    return load_chain(default_chain_path(side))


def default_workspace(side: str = "left") -> WorkspaceBox:
    return LEFT_WORKSPACE if side == "left" else RIGHT_WORKSPACE


class _ChainTables:
    """Precomputed per-link constants for batched FK."""

    def __init__(self, chain: KinematicChain):
        self.pre_rot = [rpy_matrix(link.rpy) for link in chain.links]
        self.offsets = [np.asarray(link.offset, dtype=float) for link in chain.links]
        self.axes = [np.asarray(link.rotation_axis, dtype=float) for link in chain.links]
        self.lengths = [float(link.length) for link in chain.links]


def _tables(chain: KinematicChain) -> _ChainTables:
    tab = chain.__dict__.get("_tables")
    if tab is None:
        tab = _ChainTables(chain)
        object.__setattr__(chain, "_tables", tab)
    return tab


def link_frames(chain: KinematicChain, joints, upto: int = N_JOINTS):
    """Joint-origin positions and frame rotations along the chain.

    ``joints`` is (..., 6). Returns ``(points, rotations)`` with
    ``points[..., 0]`` the base and ``points[..., i + 1]`` the frame origin
    after link ``i``; rotations align with points.
    """
    q = np.asarray(joints, dtype=float)
    batch = q.shape[:-1]
    tab = _tables(chain)
    rot = np.broadcast_to(chain.base_rotation, batch + (3, 3)).copy()
    pos = np.broadcast_to(chain.base_position, batch + (3,)).copy()
    points = [pos.copy()]
    rots = [rot.copy()]
    for i in range(upto):
        pos = pos + rot @ tab.offsets[i]
        rot = rot @ tab.pre_rot[i] @ rotation_matrix(tab.axes[i], q[..., i])
        if tab.lengths[i]:
            pos = pos + tab.lengths[i] * rot[..., :, 0]
        points.append(pos.copy())
        rots.append(rot.copy())
    return np.stack(points, axis=-2), np.stack(rots, axis=-3)


def eef_positions(chain: KinematicChain, joints) -> np.ndarray:
    """Batched EEF position, (..., 6) -> (..., 3)."""
    points, _ = link_frames(chain, joints)
    return points[..., -1, :]


def forward_kinematics(chain: KinematicChain, joints) -> Pose3:
    q = np.asarray(joints, dtype=float)
    if q.shape != (N_JOINTS,):
        raise ValueError(f"expected {N_JOINTS} joint values, got shape {q.shape}")
    points, rots = link_frames(chain, q)
    return Pose3.from_matrix(points[-1], rots[-1])


def within_limits(chain: KinematicChain, joints):
    """Closed-interval limit check. Returns ``(all_ok, per_joint_ok)``."""
    q = np.asarray(joints, dtype=float)
    flags = (q >= chain.lo) & (q <= chain.hi)
    return bool(np.all(flags)), flags


def link_points(chain: KinematicChain, joints, per_link: int = 8) -> np.ndarray:
    """Points sampled along each link segment (excludes the static base)."""
    points, _ = link_frames(chain, joints)
    segs = []
    t = np.linspace(0.0, 1.0, per_link)[:, None]
    for a, b in zip(points[1:-1], points[2:]):
        if np.allclose(a, b):
            continue
        segs.append(a + t * (b - a))
    segs.append(points[-1][None])
    return np.concatenate(segs, axis=0)


def arm_interval(chain_l, joints_l, chain_r, joints_r, densify: bool = False) -> float:
    """Minimum distance between the two arms.

    Default is the EEF-to-EEF distance; ``densify=True`` also samples eight
    points per moving link and takes the minimum over all cross pairs.
    """
    if not densify:
        pl = eef_positions(chain_l, joints_l)
        pr = eef_positions(chain_r, joints_r)
        return float(np.linalg.norm(pl - pr))
    a = link_points(chain_l, joints_l)
    b = link_points(chain_r, joints_r)
    d = np.linalg.norm(a[:, None, :] - b[None, :, :], axis=-1)
    return float(d.min())


def eef_interval_batch(chain_l, joints_l, chain_r, joints_r) -> np.ndarray:
    return np.linalg.norm(eef_positions(chain_l, joints_l) - eef_positions(chain_r, joints_r), axis=-1)
