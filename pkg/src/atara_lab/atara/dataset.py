"""On-disk ATARA datasets: rendered frames plus float32 action records.

Layout::

    out_dir/manifest.json
    out_dir/traj_00000/actions.bin             little-endian float32 [n_steps, 14]
    out_dir/traj_00000/step_000000_high.png    (and _left, _right)

While a run is in progress ``manifest.partial.json`` lists the finished
trajectories; a rerun with the same settings resumes after them.
"""

from __future__ import annotations

import hashlib
import json
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from ..kinematics import KinematicChain, chain_from_dict, default_chain
from ..renderer import CameraSpec, ObservationSet, SceneConfig, default_cameras, render_action
from .reach import child_rng
from .sampling import TrajectoryConfig, generate_trajectory

FORMAT_VERSION = 1
VIEWS = ("high", "left", "right")
MANIFEST = "manifest.json"
PARTIAL = "manifest.partial.json"
GENERATION_LOG = "generation_log.json"
ACTION_DTYPE = np.dtype("<f4")


class DatasetWriteError(RuntimeError):
    """Raised when writing fails; the partial manifest stays on disk."""


def manifest_hash(manifest: dict) -> str:
    """SHA-256 of the canonical manifest with the wall-clock ``timing`` block removed."""
    body = {k: v for k, v in manifest.items() if k != "timing"}
    return hashlib.sha256(json.dumps(body, sort_keys=True, separators=(",", ":")).encode()).hexdigest()


def traj_dir(root, index: int) -> Path:
    return Path(root) / f"traj_{index:05d}"


def frame_path(root, traj: int, step: int, view: str) -> Path:
    return traj_dir(root, traj) / f"step_{step:06d}_{view}.png"


def write_png(path: Path, image: np.ndarray):
    Image.fromarray(image).save(path, format="PNG", compress_level=1)


def write_actions(path: Path, actions: np.ndarray):
    np.ascontiguousarray(actions, dtype=ACTION_DTYPE).tofile(path)


def read_actions(path: Path, n_steps: int | None = None) -> np.ndarray:
    a = np.fromfile(path, dtype=ACTION_DTYPE)
    if a.size % 14:
        raise ValueError(f"{path}: {a.size} floats is not a multiple of 14")
    a = a.reshape(-1, 14)
    if n_steps is not None and len(a) != n_steps:
        raise ValueError(f"{path}: expected {n_steps} steps, found {len(a)}")
    return a.astype(np.float64)


@dataclass
class GenerationSpec:
    """Everything that determines a dataset's bytes."""

    total_steps: int
    seed: int
    targets_per_trajectory: int = 24
    render: bool = True
    trajectory: TrajectoryConfig = None
    scene: SceneConfig = None
    cameras: dict = None

    def __post_init__(self):
        if self.total_steps < 0:
            raise ValueError("total_steps must be >= 0")
        if self.targets_per_trajectory < 1:
            raise ValueError("targets_per_trajectory must be >= 1")
        self.trajectory = self.trajectory or TrajectoryConfig()
        self.scene = self.scene or SceneConfig()
        self.cameras = self.cameras or default_cameras()


def _render_and_write(root, index, actions, chains, cameras, scene, render):
    d = traj_dir(root, index)
    d.mkdir(parents=True, exist_ok=True)
    if render:
        cams = (cameras["high"], cameras["left_wrist"], cameras["right_wrist"])
        for step, a in enumerate(actions.astype(ACTION_DTYPE).astype(np.float64)):
            obs = render_action(chains, a, cams, scene)
            for view, img in zip(VIEWS, (obs.high, obs.left_wrist, obs.right_wrist)):
                write_png(frame_path(root, index, step, view), img)
    write_actions(d / "actions.bin", actions)


def _make_trajectory(policies, chains, spec: GenerationSpec, index: int) -> np.ndarray:
    rng = child_rng(spec.seed, index)
    traj = generate_trajectory(policies, chains[0], chains[1], spec.targets_per_trajectory, rng, spec.trajectory)
    return traj.actions


def _worker(args):
    policies, chains, spec, index, root, budget = args
    acts = _make_trajectory(policies, chains, spec, index)[:budget]
    _render_and_write(root, index, acts, chains, spec.cameras, spec.scene, spec.render)
    return index, len(acts)


def _base_manifest(spec: GenerationSpec, chains, policies) -> dict:
    return {
        "format_version": FORMAT_VERSION,
        "seed": spec.seed,
        "chain_hash": {"left": chains[0].content_hash(), "right": chains[1].content_hash()},
        "chains": {"left": chains[0].to_dict(), "right": chains[1].to_dict()},
        "cameras": {k: v.to_dict() for k, v in spec.cameras.items()},
        "scene": spec.scene.to_dict(),
        "trajectory": spec.trajectory.to_dict(),
        "targets_per_trajectory": spec.targets_per_trajectory,
        "rendered": spec.render,
        "requested_steps": spec.total_steps,
        "policy_hash": [policy_hash(p) for p in policies],
    }


def policy_hash(policy) -> str:
    h = hashlib.sha256()
    for k, v in sorted(policy.state_dict().items()):
        h.update(k.encode())
        h.update(v.detach().cpu().numpy().tobytes())
    return h.hexdigest()[:16]


def generate_dataset(policies, out_dir, total_steps: int, seed: int, scene: SceneConfig | None = None,
                     cameras: dict | None = None, chains=None, targets_per_trajectory: int = 24,
                     render: bool = True, trajectory_cfg: TrajectoryConfig | None = None,
                     workers: int = 1) -> "AtaraDataset":
    """Generate trajectories until ``total_steps`` image-action pairs exist.

    Trajectory ``i`` uses the RNG child ``(seed, i)`` and starts from the home
    pose, so the output does not depend on ``workers``. The final trajectory
    is cut to hit ``total_steps`` exactly.
    """
    chains = chains or (default_chain("left"), default_chain("right"))
    policies = tuple(policies) if isinstance(policies, (tuple, list)) else (policies["left"], policies["right"])
    spec = GenerationSpec(total_steps, seed, targets_per_trajectory, render, trajectory_cfg, scene, cameras)
    root = Path(out_dir)
    root.mkdir(parents=True, exist_ok=True)
    base = _base_manifest(spec, chains, policies)
    key = manifest_hash(base)

    done: dict[int, int] = {}
    partial = root / PARTIAL
    if partial.exists():
        prev = json.loads(partial.read_text())
        if prev.get("key") == key:
            done = {int(k): int(v) for k, v in prev["finished"].items()}
    t0 = time.perf_counter()

    def checkpoint():
        tmp = partial.with_suffix(".tmp")
        tmp.write_text(json.dumps({"key": key, "finished": {str(k): v for k, v in sorted(done.items())}}))
        os.replace(tmp, partial)

    try:
        if (root / MANIFEST).exists():
            (root / MANIFEST).unlink()
        checkpoint()
        # trajectory lengths are only known after generation, so plan greedily
        remaining = total_steps - sum(done.values())
        index = max(done) + 1 if done else 0
        if workers <= 1:
            while remaining > 0:
                acts = _make_trajectory(policies, chains, spec, index)[:remaining]
                _render_and_write(root, index, acts, chains, spec.cameras, spec.scene, spec.render)
                done[index] = len(acts)
                remaining -= len(acts)
                index += 1
                checkpoint()
        else:
            with ProcessPoolExecutor(max_workers=workers) as pool:
                while remaining > 0:
                    # lengths are unknown up front: generate a wave, keep the prefix that fits
                    wave = list(range(index, index + workers))
                    lengths = dict(pool.map(_worker, [(policies, chains, spec, i, root, remaining) for i in wave]))
                    for i in wave:
                        if remaining <= 0:
                            _remove_traj(root, i)
                            continue
                        n = min(lengths[i], remaining)
                        if n < lengths[i]:
                            _truncate_traj(root, i, n)
                        done[i] = n
                        remaining -= n
                    index += workers
                    checkpoint()
    except OSError as exc:
        raise DatasetWriteError(f"writing {root} failed ({exc}); {PARTIAL} marks the resumable state") from exc

    elapsed = time.perf_counter() - t0
    n_steps = sum(done.values())
    manifest = dict(base)
    manifest.update(
        n_steps=n_steps,
        n_trajectories=len(done),
        trajectory_steps=[done[i] for i in sorted(done)],
    )
    manifest["manifest_hash"] = manifest_hash(manifest)
    (root / MANIFEST).write_text(json.dumps(manifest, indent=1, sort_keys=True))
    # wall-clock numbers stay out of the manifest so its bytes are reproducible
    timing = {"seconds": elapsed, "pairs_per_second": n_steps / elapsed if elapsed > 0 else None}
    (root / GENERATION_LOG).write_text(json.dumps(timing, indent=1))
    partial.unlink(missing_ok=True)
    return AtaraDataset(root)


def _remove_traj(root, index):
    d = traj_dir(root, index)
    if d.exists():
        for f in d.iterdir():
            f.unlink()
        d.rmdir()


def _truncate_traj(root, index, n):
    d = traj_dir(root, index)
    acts = read_actions(d / "actions.bin")
    write_actions(d / "actions.bin", acts[:n])
    for f in d.glob("step_*.png"):
        if int(f.name.split("_")[1]) >= n:
            f.unlink()


class AtaraDataset:
    """Read access to a generated dataset directory."""

    def __init__(self, root):
        self.root = Path(root)
        path = self.root / MANIFEST
        if not path.exists():
            raise FileNotFoundError(f"no {MANIFEST} in {self.root}")
        self.manifest = json.loads(path.read_text())
        if self.manifest.get("format_version") != FORMAT_VERSION:
            raise ValueError(f"unsupported dataset format {self.manifest.get('format_version')}")
        self.steps = list(self.manifest["trajectory_steps"])
        self.offsets = np.concatenate([[0], np.cumsum(self.steps)]).astype(int)
        self.chains = (
            _chain_from_manifest(self.manifest, "left"),
            _chain_from_manifest(self.manifest, "right"),
        )
        self.cameras = {k: CameraSpec.from_dict(v) for k, v in self.manifest["cameras"].items()}
        self.scene = SceneConfig.from_dict(self.manifest["scene"])
        self._actions = None

    def __len__(self) -> int:
        return int(self.offsets[-1])

    @property
    def rendered(self) -> bool:
        return bool(self.manifest.get("rendered", True))

    @property
    def resolution(self) -> tuple[int, int]:
        return tuple(self.cameras["high"].image_size)

    def locate(self, index: int) -> tuple[int, int]:
        if not 0 <= index < len(self):
            raise IndexError(index)
        t = int(np.searchsorted(self.offsets, index, side="right") - 1)
        return t, int(index - self.offsets[t])

    def trajectory_actions(self, traj: int) -> np.ndarray:
        return read_actions(traj_dir(self.root, traj) / "actions.bin", self.steps[traj])

    def actions(self) -> np.ndarray:
        """All action records, ``(n_steps, 14)``."""
        if self._actions is None:
            parts = [self.trajectory_actions(t) for t in range(len(self.steps))]
            self._actions = np.concatenate(parts) if parts else np.zeros((0, 14))
        return self._actions

    def frame(self, index: int) -> ObservationSet:
        if not self.rendered:
            raise ValueError("dataset was generated without frames")
        t, s = self.locate(index)
        imgs = [np.asarray(Image.open(frame_path(self.root, t, s, v)).convert("RGB")) for v in VIEWS]
        return ObservationSet(*imgs)

    def __getitem__(self, index: int):
        return self.frame(index), self.actions()[index]


def _chain_from_manifest(manifest: dict, side: str) -> KinematicChain:
    return chain_from_dict(manifest["chains"][side])
