"""Evaluation: threshold accuracy, L1 error, coverage, scripted replay and ablation tables."""

from __future__ import annotations

import json
import hashlib
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .atara.dataset import (
    FORMAT_VERSION,
    MANIFEST,
    VIEWS,
    AtaraDataset,
    frame_path,
    manifest_hash,
    traj_dir,
    write_actions,
    write_png,
)
from .kinematics import GRIPPER_INDICES, KinematicChain, eef_positions, within_limits
from .renderer import SceneConfig, default_cameras, render_action

SUBSTEPS_FILE = "substeps.json"
EEF_TOLERANCE = 0.02
NON_GRIPPER = tuple(i for i in range(14) if i not in GRIPPER_INDICES)


@dataclass(frozen=True)
class ThresholdSpec:
    joint_threshold: float = 0.06
    gripper_threshold: float = 0.5
    gripper_indices: tuple = GRIPPER_INDICES

    def __post_init__(self):
        if self.joint_threshold <= 0 or self.gripper_threshold <= 0:
            raise ValueError("thresholds must be > 0")

    def vector(self) -> np.ndarray:
        thr = np.full(14, float(self.joint_threshold))
        thr[list(self.gripper_indices)] = self.gripper_threshold
        return thr

    def to_dict(self) -> dict:
        return {"joint_threshold": self.joint_threshold, "gripper_threshold": self.gripper_threshold,
                "gripper_indices": list(self.gripper_indices)}

    @classmethod
    def from_dict(cls, d: dict) -> "ThresholdSpec":
        d = dict(d)
        if "gripper_indices" in d:
            d["gripper_indices"] = tuple(d["gripper_indices"])
        return cls(**d)


def action_accuracy(pred, gt, spec: ThresholdSpec | None = None):
    """Per-dim pass iff ``|pred - gt| < threshold``; a sample passes iff all dims pass.

    Works on single vectors or ``(n, 14)`` batches; returns ``(sample_pass, per_dim_flags)``.
    """
    spec = spec or ThresholdSpec()
    ok = np.abs(np.asarray(pred, dtype=float) - np.asarray(gt, dtype=float)) < spec.vector()
    return ok.all(-1), ok


def l1_error_excluding_gripper(pred, gt) -> float:
    """Mean absolute error over the 12 joint dimensions."""
    d = np.abs(np.asarray(pred, dtype=float) - np.asarray(gt, dtype=float))
    return float(d[..., list(NON_GRIPPER)].mean())


# ---------------------------------------------------------------- coverage


@dataclass
class CoverageResult:
    counts: np.ndarray  # (14, bins)
    edges: np.ndarray  # (14, bins + 1)
    min_bin: np.ndarray  # (14,)

    @property
    def full(self) -> bool:
        return bool((self.min_bin > 0).all())


def coverage_histogram(data, bins: int = 30, chains=None) -> CoverageResult:
    """Per-dimension occupancy over ``[limit lo, hi]`` (grippers over ``[0, 1]``).

    ``data`` is an :class:`AtaraDataset` or an ``(n, 14)`` action array (then
    ``chains`` supplies the limits). Values on or beyond a limit land in the
    edge bin, so each row sums to the step count.
    """
    if bins < 2:
        raise ValueError("bins must be >= 2")
    if isinstance(data, AtaraDataset):
        actions, chains = data.actions(), chains or data.chains
    else:
        actions = np.asarray(data, dtype=float).reshape(-1, 14)
        if chains is None:
            raise ValueError("chains required for raw action arrays")
    lo = np.concatenate([chains[0].lo, [0.0], chains[1].lo, [0.0]])
    hi = np.concatenate([chains[0].hi, [1.0], chains[1].hi, [1.0]])
    counts = np.zeros((14, bins), dtype=np.int64)
    edges = np.linspace(lo, hi, bins + 1).T
    for d in range(14):
        idx = np.floor((actions[:, d] - lo[d]) / (hi[d] - lo[d]) * bins).astype(int)
        counts[d] = np.bincount(np.clip(idx, 0, bins - 1), minlength=bins)
    return CoverageResult(counts, edges, counts.min(1))


def plot_coverage(result: CoverageResult, path) -> Path:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, axes = plt.subplots(2, 7, figsize=(18, 5))
    for d, ax in enumerate(axes.ravel()):
        e = result.edges[d]
        ax.bar(e[:-1], result.counts[d], width=np.diff(e), align="edge", color="tab:blue")
        ax.set_title(f"dim {d}" + (" (gripper)" if d in GRIPPER_INDICES else ""), fontsize=8)
        ax.tick_params(labelsize=6)
    fig.tight_layout()
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, dpi=80)
    plt.close(fig)
    return path


# ---------------------------------------------------------------- predictors


class OraclePredictor:
    """Returns the stored ground truth for the requested index."""

    def __init__(self, actions):
        self.actions = np.asarray(actions, dtype=float)

    def predict(self, obs, index=None) -> np.ndarray:
        return self.actions[index].copy()


class ConstantPredictor:
    def __init__(self, action):
        self.action = np.asarray(action, dtype=float)

    def predict(self, obs, index=None) -> np.ndarray:
        return self.action.copy()


class BiasedPredictor:
    """Wraps another predictor and adds a fixed offset."""

    def __init__(self, inner, bias):
        self.inner = inner
        self.bias = np.asarray(bias, dtype=float)

    def predict(self, obs, index=None) -> np.ndarray:
        return self.inner.predict(obs, index) + self.bias


def _predict_all(model, frames_fn, n, batch: int = 16) -> np.ndarray:
    if hasattr(model, "predict_batch"):
        out = []
        for s in range(0, n, batch):
            out.append(model.predict_batch([frames_fn(i) for i in range(s, min(n, s + batch))]))
        return np.concatenate(out) if out else np.zeros((0, 14))
    return np.stack([model.predict(frames_fn(i), i) for i in range(n)]) if n else np.zeros((0, 14))


# ---------------------------------------------------------------- reports


@dataclass
class EvalReport:
    sample_accuracy: float
    per_dim_accuracy: list
    l1_excluding_gripper: float
    n_samples: int
    skipped: int = 0
    split_counts: dict = field(default_factory=dict)
    replay: dict | None = None
    dataset_hash: str | None = None
    model_hash: str | None = None

    def to_dict(self) -> dict:
        return asdict(self)

    def to_text(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=True)

    def write(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(self.to_text())
        return path

    @classmethod
    def read(cls, path) -> "EvalReport":
        return cls(**json.loads(Path(path).read_text()))


def summarize(pred: np.ndarray, gt: np.ndarray, spec: ThresholdSpec | None = None, **extra) -> EvalReport:
    if len(gt) == 0:
        return EvalReport(0.0, [0.0] * 14, 0.0, 0, **extra)
    ok, dims = action_accuracy(pred, gt, spec)
    return EvalReport(
        sample_accuracy=100.0 * float(ok.mean()),
        per_dim_accuracy=(100.0 * dims.mean(0)).tolist(),
        l1_excluding_gripper=l1_error_excluding_gripper(pred, gt),
        n_samples=int(len(gt)),
        **extra,
    )


def model_hash(model) -> str | None:
    inner = getattr(model, "model", None)
    sd = getattr(inner, "state_dict", None) or getattr(model, "state_dict", None)
    if sd is None:
        return None
    h = hashlib.sha256()
    for k, v in sorted(sd().items()):
        h.update(k.encode())
        h.update(v.detach().cpu().numpy().tobytes())
    return h.hexdigest()[:16]


def dataset_accuracy(model, testset: AtaraDataset, spec: ThresholdSpec | None = None,
                     limit: int | None = None) -> EvalReport:
    """Run the full inference pipeline over every readable frame of ``testset``.

    ``model`` is anything with ``predict(obs, index)`` (optionally
    ``predict_batch``). Frames that fail to load are skipped and counted.
    """
    gt_all = testset.actions()
    n = len(testset) if limit is None else min(limit, len(testset))
    good, frames, skipped = [], {}, 0
    for i in range(n):
        try:
            frames[i] = testset.frame(i)
            good.append(i)
        except (OSError, ValueError, SyntaxError):
            skipped += 1
    if hasattr(model, "split_counts"):
        model.split_counts = {"flood_fill": 0, "fallback": 0}
    if hasattr(model, "predict_batch"):
        pred = _predict_all(model, lambda k: frames[good[k]], len(good))
    else:
        pred = np.stack([model.predict(frames[i], i) for i in good]) if good else np.zeros((0, 14))
    return summarize(
        pred, gt_all[good], spec, skipped=skipped,
        split_counts=dict(getattr(model, "split_counts", {})),
        dataset_hash=testset.manifest.get("manifest_hash"), model_hash=model_hash(model),
    )


# ---------------------------------------------------------------- scripted replay


@dataclass(frozen=True)
class Waypoint:
    name: str
    action: tuple
    steps: int = 0


@dataclass
class ReplayEpisode:
    frames: list
    actions: np.ndarray
    substeps: list  # [(name, start, stop)]
    initial_state: np.ndarray

    def __post_init__(self):
        if len(self.frames) != len(self.actions):
            raise ValueError("frames and actions must align 1:1")
        cursor = 0
        for _, a, b in self.substeps:
            if a != cursor or b <= a:
                raise ValueError("sub-steps must partition the frame range")
            cursor = b
        if cursor != len(self.actions):
            raise ValueError("sub-steps must cover every frame")

    @property
    def resolution(self):
        return self.frames[0].resolution if self.frames else None


def _check_waypoint(chains, a, name):
    a = np.asarray(a, dtype=float)
    if a.shape != (14,) or not np.all(np.isfinite(a)):
        raise ValueError(f"waypoint {name!r} must be a finite 14-vector")
    if not (within_limits(chains[0], a[0:6])[0] and within_limits(chains[1], a[7:13])[0]):
        raise ValueError(f"waypoint {name!r} violates joint limits")
    if not (0.0 <= a[6] <= 1.0 and 0.0 <= a[13] <= 1.0):
        raise ValueError(f"waypoint {name!r} gripper outside [0, 1]")
    return a


def script_actions(script, chains):
    """Interpolated actions and named sub-steps for a waypoint script.

    The first waypoint is the initial state; each later waypoint adds a
    sub-step of ``steps`` frames ending exactly on it.
    """
    if len(script) < 2:
        raise ValueError("a script needs at least two waypoints")
    pts = [_check_waypoint(chains, w.action, w.name) for w in script]
    rows, subs = [], []
    for k in range(1, len(script)):
        n = int(script[k].steps)
        if n < 1:
            raise ValueError(f"waypoint {script[k].name!r} needs steps >= 1")
        t = np.arange(1, n + 1)[:, None] / n
        rows.append(pts[k - 1] + t * (pts[k] - pts[k - 1]))
        start = subs[-1][2] if subs else 0
        subs.append((script[k].name, start, start + n))
    return np.concatenate(rows), subs, pts[0]


def record_replay_episode(script, chains, cameras=None, scene: SceneConfig | None = None,
                          out=None) -> ReplayEpisode:
    """Render a scripted trajectory; optionally store it in the dataset layout."""
    cameras = cameras or default_cameras()
    actions, subs, init = script_actions(script, chains)
    actions = actions.astype("<f4").astype(np.float64)
    cams = (cameras["high"], cameras["left_wrist"], cameras["right_wrist"])
    frames = [render_action(chains, a, cams, scene) for a in actions]
    ep = ReplayEpisode(frames, actions, subs, init)
    if out is not None:
        save_episode(ep, out, chains, cameras, scene or SceneConfig())
    return ep


def save_episode(ep: ReplayEpisode, out, chains, cameras, scene: SceneConfig) -> Path:
    root = Path(out)
    traj_dir(root, 0).mkdir(parents=True, exist_ok=True)
    for step, obs in enumerate(ep.frames):
        for view, img in zip(VIEWS, (obs.high, obs.left_wrist, obs.right_wrist)):
            write_png(frame_path(root, 0, step, view), img)
    write_actions(traj_dir(root, 0) / "actions.bin", ep.actions)
    manifest = {
        "format_version": FORMAT_VERSION,
        "chains": {"left": chains[0].to_dict(), "right": chains[1].to_dict()},
        "cameras": {k: v.to_dict() for k, v in cameras.items()},
        "scene": scene.to_dict(),
        "rendered": True,
        "trajectory_steps": [len(ep.actions)],
    }
    manifest["manifest_hash"] = manifest_hash(manifest)
    (root / MANIFEST).write_text(json.dumps(manifest, indent=1, sort_keys=True))
    (root / SUBSTEPS_FILE).write_text(json.dumps(
        {"initial_state": [float(x) for x in ep.initial_state],
         "substeps": [[n, a, b] for n, a, b in ep.substeps]}, indent=1))
    return root


def load_episode(root) -> tuple[ReplayEpisode, AtaraDataset]:
    ds = AtaraDataset(root)
    meta = json.loads((Path(root) / SUBSTEPS_FILE).read_text())
    frames = [ds.frame(i) for i in range(len(ds))]
    ep = ReplayEpisode(frames, ds.actions().astype(np.float64), [tuple(s) for s in meta["substeps"]],
                       np.asarray(meta["initial_state"], dtype=float))
    return ep, ds


def _ik_position(chain: KinematicChain, target, q0, iters: int = 200, damping: float = 0.05):
    """Damped least-squares position IK over the first three joints."""
    q = np.array(q0, dtype=float)
    target = np.asarray(target, dtype=float)
    for _ in range(iters):
        err = target - eef_positions(chain, q)
        if np.linalg.norm(err) < 1e-4:
            break
        jac = np.zeros((3, 3))
        for j in range(3):
            dq = q.copy()
            dq[j] += 1e-6
            jac[:, j] = (eef_positions(chain, dq) - eef_positions(chain, q)) / 1e-6
        step = jac.T @ np.linalg.solve(jac @ jac.T + damping**2 * np.eye(3), err)
        q[:3] = np.clip(q[:3] + np.clip(step, -0.2, 0.2), chain.lo[:3], chain.hi[:3])
    return q, float(np.linalg.norm(target - eef_positions(chain, q)))


def _arm_pose(chain, rng, region_lo, region_hi, q_prev):
    for _ in range(50):
        w = rng.uniform(region_lo, region_hi)
        q, err = _ik_position(chain, w, q_prev)
        if err < 1e-3:
            q[3:] = np.clip(q_prev[3:] + rng.uniform(-0.6, 0.6, 3), chain.lo[3:], chain.hi[3:])
            return q
    raise RuntimeError("could not find a reachable scripted pose")


def scripted_episode_script(chains, seed: int, steps: int = 12):
    """Pick-and-place style script: reach, grasp, transport, release (one or both arms)."""
    rng = np.random.default_rng(seed)
    bimanual = bool(rng.integers(2))
    active = ("left", "right") if bimanual else (("left",) if rng.integers(2) == 0 else ("right",))
    cur = np.concatenate([chains[0].home, [1.0], chains[1].home, [1.0]])
    regions = {"left": ((0.40, 0.10, 0.65), (0.66, 0.35, 0.95)), "right": ((0.40, -0.35, 0.65), (0.66, -0.10, 0.95))}
    sl = {"left": (slice(0, 6), 6, chains[0]), "right": (slice(7, 13), 13, chains[1])}
    script = [Waypoint("start", tuple(cur))]

    def move(name, grip=None, pose=True):
        nonlocal cur
        nxt = cur.copy()
        for side in active:
            js, g, chain = sl[side]
            if pose:
                nxt[js] = _arm_pose(chain, rng, *regions[side], cur[js])
            if grip is not None:
                nxt[g] = grip
        script.append(Waypoint(name, tuple(nxt), steps))
        cur = nxt

    move("reach", grip=1.0)
    move("grasp", grip=float(rng.uniform(0.0, 0.2)), pose=False)
    move("transport")
    move("release", grip=1.0, pose=False)
    return script


def scripted_episodes(chains, n: int = 10, seed: int = 0, steps: int = 12, cameras=None, scene=None, out=None):
    eps = []
    for k in range(n):
        dest = None if out is None else Path(out) / f"episode_{k:03d}"
        eps.append(record_replay_episode(scripted_episode_script(chains, seed * 1000 + k, steps), chains,
                                         cameras, scene, dest))
    return eps


@dataclass
class ReplayResult:
    substep_success: list  # [(name, bool)]
    frame_pass: np.ndarray
    eef_error: list  # per sub-step max over arms of final EEF distance
    predictions: np.ndarray
    executed: np.ndarray

    @property
    def success(self) -> bool:
        return all(ok for _, ok in self.substep_success)

    @property
    def substep_rate(self) -> float:
        return float(np.mean([ok for _, ok in self.substep_success])) if self.substep_success else 0.0

    def trace(self) -> dict:
        return {
            "substeps": [[n, bool(ok), float(e)] for (n, ok), e in zip(self.substep_success, self.eef_error)],
            "frame_pass": self.frame_pass.astype(int).tolist(),
            "predictions": self.predictions.tolist(),
            "executed": self.executed.tolist(),
            "success": self.success,
        }


def replay(model, episode: ReplayEpisode, chains, spec: ThresholdSpec | None = None,
           eef_tolerance: float = EEF_TOLERANCE) -> ReplayResult:
    """Feed each frame to ``model`` and set the simulated joints to its prediction.

    A sub-step succeeds iff every frame in it passes the thresholds and the
    executed end-effectors at its last frame lie within ``eef_tolerance`` of
    the reference ones.
    """
    spec = spec or ThresholdSpec()
    n = len(episode.frames)
    if hasattr(model, "predict_batch"):
        pred = _predict_all(model, lambda i: episode.frames[i], n)
    else:
        pred = np.stack([model.predict(episode.frames[i], i) for i in range(n)])
    executed = pred.copy()
    executed[:, 0:6] = np.clip(executed[:, 0:6], chains[0].lo, chains[0].hi)
    executed[:, 7:13] = np.clip(executed[:, 7:13], chains[1].lo, chains[1].hi)
    for g in GRIPPER_INDICES:
        executed[:, g] = np.clip(executed[:, g], 0.0, 1.0)
    passed, _ = action_accuracy(pred, episode.actions, spec)
    results, errs = [], []
    for name, a, b in episode.substeps:
        ref, got = episode.actions[b - 1], executed[b - 1]
        err = max(
            float(np.linalg.norm(eef_positions(chains[0], ref[0:6]) - eef_positions(chains[0], got[0:6]))),
            float(np.linalg.norm(eef_positions(chains[1], ref[7:13]) - eef_positions(chains[1], got[7:13]))),
        )
        errs.append(err)
        results.append((name, bool(passed[a:b].all() and err <= eef_tolerance)))
    return ReplayResult(results, passed, errs, pred, executed)


def replay_summary(results) -> dict:
    subs = [ok for r in results for _, ok in r.substep_success]
    return {
        "episodes": len(results),
        "substeps": len(subs),
        "substep_success_rate": 100.0 * float(np.mean(subs)) if subs else 0.0,
        "episode_success_rate": 100.0 * float(np.mean([r.success for r in results])) if results else 0.0,
    }


# ---------------------------------------------------------------- ablation


ROWS = ("coupled", "decoupled")


def ablation_report(variants: dict, out_dir=None) -> dict:
    """2 x N grid (coupling x head) of mean sample accuracy plus an L1 column.

    ``variants`` maps ``(coupling, head)`` to a list of :class:`EvalReport`
    (one per seed). Writes ``ablation.json`` and ``ablation.png`` when
    ``out_dir`` is given.
    """
    if len(variants) < 2:
        raise ValueError("need at least two variants")
    heads = sorted({h for _, h in variants})
    grid = [[None] * len(heads) for _ in ROWS]
    l1 = [[None] * len(heads) for _ in ROWS]
    std = [[None] * len(heads) for _ in ROWS]
    for (coupling, head), reports in variants.items():
        reports = reports if isinstance(reports, (list, tuple)) else [reports]
        r, c = ROWS.index(coupling), heads.index(head)
        acc = [rep.sample_accuracy for rep in reports]
        grid[r][c] = float(np.mean(acc))
        std[r][c] = float(np.std(acc))
        l1[r][c] = float(np.mean([rep.l1_excluding_gripper for rep in reports]))
    table = {"rows": list(ROWS), "columns": heads, "accuracy": grid, "accuracy_std": std, "l1": l1,
             "seeds": {f"{k[0]}/{k[1]}": len(v) if isinstance(v, (list, tuple)) else 1 for k, v in variants.items()}}
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "ablation.json").write_text(json.dumps(table, indent=1, sort_keys=True))
        _plot_ablation(table, out / "ablation.png")
    return table


def _plot_ablation(table: dict, path: Path):
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(6, 4))
    cols = table["columns"]
    width = 0.8 / len(table["rows"])
    for r, row in enumerate(table["rows"]):
        vals = [v if v is not None else 0.0 for v in table["accuracy"][r]]
        ax.bar(np.arange(len(cols)) + r * width, vals, width, label=row)
    ax.set_xticks(np.arange(len(cols)) + width / 2)
    ax.set_xticklabels(cols)
    ax.set_ylabel("sample accuracy (%)")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=80)
    plt.close(fig)

