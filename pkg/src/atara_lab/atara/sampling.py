"""Collision-aware bimanual target sampling and trajectory generation."""

from __future__ import annotations

from dataclasses import dataclass, field, asdict, fields

import numpy as np

from ..kinematics import (
    LEFT_WORKSPACE,
    RIGHT_WORKSPACE,
    KinematicChain,
    WorkspaceBox,
    default_chain,
    eef_positions,
    eef_interval_batch,
)
from .reach import ACTION_DIM, ReachEnvConfig, apply_action, observation

PLANE_RANGE = (-0.15, 0.15)
INTERVAL_THRESHOLD = 0.15


class SamplingStarvationError(RuntimeError):
    """Too many consecutive rejections for one boundary plane."""


@dataclass(frozen=True)
class BoundaryPlane:
    """Plane y = b (normal +y) splitting the two arms' target regions."""

    y_offset: float
    margin: float = 0.0

    def __post_init__(self):
        if not np.isfinite(self.y_offset):
            raise ValueError("plane offset must be finite")
        if self.margin < 0:
            raise ValueError("plane margin must be >= 0")

    @classmethod
    def sample(cls, rng, y_range=PLANE_RANGE, margin: float = 0.0) -> "BoundaryPlane":
        return cls(float(rng.uniform(*y_range)), margin)

    def left_region(self, workspace: WorkspaceBox = LEFT_WORKSPACE) -> WorkspaceBox:
        return workspace.clip_y(lo=self.y_offset + self.margin)

    def right_region(self, workspace: WorkspaceBox = RIGHT_WORKSPACE) -> WorkspaceBox:
        return workspace.clip_y(hi=self.y_offset - self.margin)


def augment_orientation(base_joints, rng, chain: KinematicChain | None = None) -> np.ndarray:
    """Keep J1-J3 and draw J4-J6 uniformly within their limits."""
    chain = chain or default_chain("left")
    q = np.array(base_joints, dtype=float, copy=True)
    q[ACTION_DIM:6] = rng.uniform(chain.lo[ACTION_DIM:], chain.hi[ACTION_DIM:])
    return q


def _regions(plane: BoundaryPlane, workspaces):
    ws_l, ws_r = workspaces
    try:
        return plane.left_region(ws_l), plane.right_region(ws_r)
    except ValueError as exc:
        raise ValueError(f"plane y={plane.y_offset:.4f} leaves an empty region: {exc}") from None


def sample_bimanual_pair(
    plane: BoundaryPlane,
    workspaces=(LEFT_WORKSPACE, RIGHT_WORKSPACE),
    rng=None,
    solve=None,
    chains=None,
    threshold: float = INTERVAL_THRESHOLD,
    max_rejections: int = 1000,
):
    """Draw ``(w_L, w_R)`` uniformly on each side of ``plane``.

    Pairs are rejected until the arms, placed by ``solve(w_L, w_R) -> (q_L,
    q_R)`` on ``chains``, keep an EEF interval of at least ``threshold``.
    Without a solver the targets themselves stand in for the solved EEFs.
    """
    reg_l, reg_r = _regions(plane, workspaces)
    for _ in range(max_rejections):
        w_l, w_r = reg_l.sample(rng), reg_r.sample(rng)
        if solve is None:
            gap = float(np.linalg.norm(w_l - w_r))
        else:
            q_l, q_r = solve(w_l, w_r)
            gap = float(eef_interval_batch(chains[0], q_l, chains[1], q_r))
        if gap >= threshold:
            return w_l, w_r
    raise SamplingStarvationError(f"{max_rejections} consecutive rejections for plane y={plane.y_offset:.4f}")


def sample_bimanual_pairs(
    planes,
    workspaces=(LEFT_WORKSPACE, RIGHT_WORKSPACE),
    rng=None,
    solve=None,
    chains=None,
    threshold: float = INTERVAL_THRESHOLD,
    max_rejections: int = 1000,
):
    """Batched :func:`sample_bimanual_pair`, one accepted pair per plane.

    ``solve`` takes ``(n, 3)`` target arrays and returns ``(n, 6)`` joint
    arrays. Returns ``(w_L, w_R)`` of shape ``(n, 3)``.
    """
    planes = list(planes)
    n = len(planes)
    regs = [_regions(p, workspaces) for p in planes]
    lo_l = np.array([r[0].lo for r in regs]).reshape(n, 3)
    hi_l = np.array([r[0].hi for r in regs]).reshape(n, 3)
    lo_r = np.array([r[1].lo for r in regs]).reshape(n, 3)
    hi_r = np.array([r[1].hi for r in regs]).reshape(n, 3)
    out_l, out_r = np.zeros((n, 3)), np.zeros((n, 3))
    pending = np.arange(n)
    rejections = np.zeros(n, dtype=int)
    while len(pending):
        w_l = rng.uniform(lo_l[pending], hi_l[pending])
        w_r = rng.uniform(lo_r[pending], hi_r[pending])
        if solve is None:
            gap = np.linalg.norm(w_l - w_r, axis=-1)
        else:
            q_l, q_r = solve(w_l, w_r)
            gap = eef_interval_batch(chains[0], q_l, chains[1], q_r)
        ok = gap >= threshold
        out_l[pending[ok]], out_r[pending[ok]] = w_l[ok], w_r[ok]
        rejections[pending[~ok]] += 1
        starving = pending[~ok][rejections[pending[~ok]] >= max_rejections]
        if len(starving):
            b = planes[int(starving[0])].y_offset
            raise SamplingStarvationError(f"{max_rejections} consecutive rejections for plane y={b:.4f}")
        pending = pending[~ok]
    return out_l, out_r


@dataclass
class TrajectoryConfig:
    interval_threshold: float = INTERVAL_THRESHOLD
    max_rejections: int = 1000
    plane_range: tuple = PLANE_RANGE
    plane_margin: float = 0.0
    horizon: int | None = None  # default: the policy's training horizon
    max_step: float | None = None
    success_radius: float = 0.01

    def to_dict(self) -> dict:
        d = asdict(self)
        d["plane_range"] = list(self.plane_range)
        return d

    @classmethod
    def from_dict(cls, d: dict | None) -> "TrajectoryConfig":
        d = dict(d or {})
        unknown = set(d) - {f.name for f in fields(cls)}
        if unknown:
            raise ValueError(f"unknown trajectory config keys: {sorted(unknown)}")
        if "plane_range" in d:
            d["plane_range"] = tuple(d["plane_range"])
        return cls(**d)


@dataclass
class Trajectory:
    actions: np.ndarray  # (n, 14)
    plane: BoundaryPlane
    targets: list = field(default_factory=list)  # accepted (w_L, w_R) pairs
    segments: list = field(default_factory=list)  # (start, stop) step ranges per target attempt
    truncations: int = 0

    def __len__(self):
        return len(self.actions)


def _policy_pair(policy):
    if isinstance(policy, dict):
        return policy["left"], policy["right"]
    if isinstance(policy, (tuple, list)):
        return policy[0], policy[1]
    return policy, policy


def _reach_segment(pol, chain, q, w, horizon, max_step, radius):
    """Deterministic rollout from ``q`` toward ``w``; returns the (k, 6) joint path."""
    path = []
    for _ in range(horizon):
        if np.linalg.norm(eef_positions(chain, q) - w) < radius:
            break
        a = pol.act_deterministic(observation(w, q)[None])[0]
        q = apply_action(chain, q, a, max_step)
        path.append(q)
    return np.array(path).reshape(-1, 6)


def generate_trajectory(policy, chain_l: KinematicChain, chain_r: KinematicChain, n_targets: int, rng,
                        cfg: TrajectoryConfig | None = None, workspaces=(LEFT_WORKSPACE, RIGHT_WORKSPACE),
                        start=None) -> Trajectory:
    """Roll both arms' reach policies through ``n_targets`` bimanual targets.

    ``policy`` is a ``(left, right)`` pair (or a dict with those keys). Wrist
    joints and gripper openings get a fresh uniform draw per target and are
    interpolated linearly over the segment. A step that would bring the EEFs
    closer than the interval threshold truncates the segment and the target
    pair is redrawn from the truncated state.
    """
    cfg = cfg or TrajectoryConfig()
    pol_l, pol_r = _policy_pair(policy)
    env = pol_l.meta.get("env", {})
    horizon = int(cfg.horizon or env.get("horizon", ReachEnvConfig.horizon))
    max_step = float(cfg.max_step or env.get("max_step", ReachEnvConfig.max_step))

    plane = BoundaryPlane.sample(rng, cfg.plane_range, cfg.plane_margin)
    if start is None:
        q_l, q_r, g = chain_l.home.copy(), chain_r.home.copy(), np.zeros(2)
    else:
        s = np.asarray(start, dtype=float)
        q_l, q_r, g = s[0:6].copy(), s[7:13].copy(), s[[6, 13]].copy()
    traj = Trajectory(np.zeros((0, 14)), plane)
    rows = []
    for _ in range(n_targets):
        rejections = 0
        while True:
            w_l, w_r = sample_bimanual_pair(plane, workspaces, rng, threshold=cfg.interval_threshold,
                                            max_rejections=cfg.max_rejections)
            wrist_l = augment_orientation(q_l, rng, chain_l)[ACTION_DIM:]
            wrist_r = augment_orientation(q_r, rng, chain_r)[ACTION_DIM:]
            g_new = rng.uniform(0.0, 1.0, size=2)
            path_l = _reach_segment(pol_l, chain_l, q_l, w_l, horizon, max_step, cfg.success_radius)
            path_r = _reach_segment(pol_r, chain_r, q_r, w_r, horizon, max_step, cfg.success_radius)
            n = max(len(path_l), len(path_r), 1)
            path_l = _pad(path_l, q_l, n)
            path_r = _pad(path_r, q_r, n)
            frac = (np.arange(1, n + 1) / n)[:, None]
            path_l[:, ACTION_DIM:] = q_l[ACTION_DIM:] + frac * (wrist_l - q_l[ACTION_DIM:])
            path_r[:, ACTION_DIM:] = q_r[ACTION_DIM:] + frac * (wrist_r - q_r[ACTION_DIM:])
            grips = g + frac * (g_new - g)
            gap = eef_interval_batch(chain_l, path_l, chain_r, path_r)
            bad = np.flatnonzero(gap < cfg.interval_threshold)
            keep = n if len(bad) == 0 else int(bad[0])
            if keep:
                seg = np.concatenate(
                    [path_l[:keep], grips[:keep, :1], path_r[:keep], grips[:keep, 1:]], axis=1
                )
                traj.segments.append((len(rows), len(rows) + keep))
                rows.extend(seg)
                q_l, q_r, g = path_l[keep - 1].copy(), path_r[keep - 1].copy(), grips[keep - 1].copy()
            if len(bad) == 0:
                traj.targets.append((w_l, w_r))
                break
            traj.truncations += 1
            rejections += 1
            if rejections >= cfg.max_rejections:
                raise SamplingStarvationError(
                    f"{cfg.max_rejections} consecutive truncated segments for plane y={plane.y_offset:.4f}"
                )
    traj.actions = np.asarray(rows, dtype=float).reshape(-1, 14)
    return traj


def _pad(path: np.ndarray, q0: np.ndarray, n: int) -> np.ndarray:
    """Extend a joint path to ``n`` rows by holding its last configuration."""
    if len(path) == 0:
        return np.tile(q0, (n, 1))
    if len(path) < n:
        path = np.concatenate([path, np.tile(path[-1], (n - len(path), 1))])
    return path.copy()
