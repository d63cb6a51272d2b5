"""Reach environment and PPO training of the EEF-position policy f_RL : W -> A."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, asdict, fields
from pathlib import Path

import numpy as np
import torch

from ..kinematics import KinematicChain, WorkspaceBox, chain_from_dict, eef_positions
from .ppo import PpoConfig, PpoDivergenceError, ReachPolicy, RolloutBuffer, gae_advantages, ppo_update

ACTION_DIM = 3  # the policy drives J1-J3; the wrist joints are set by augmentation


@dataclass
class ReachEnvConfig:
    num_envs: int = 512
    horizon: int = 100
    max_step: float = 0.05  # rad per step
    success_radius: float = 0.01
    reset_random_prob: float = 0.2  # otherwise the next episode starts where the last ended
    reset_home_prob: float = 0.1
    divergence_patience: int = 30
    divergence_factor: float = 1.5

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict | None) -> "ReachEnvConfig":
        d = dict(d or {})
        unknown = set(d) - {f.name for f in fields(cls)}
        if unknown:
            raise ValueError(f"unknown reach-env config keys: {sorted(unknown)}")
        return cls(**d)


def reward(chain: KinematicChain, joints, target) -> np.ndarray | float:
    """Negative squared distance between the EEF and the target."""
    target = np.asarray(target, dtype=float)
    if not np.all(np.isfinite(target)):
        raise ValueError("target must be finite")
    d = eef_positions(chain, joints) - target
    r = -np.sum(d * d, axis=-1)
    return float(r) if np.ndim(r) == 0 else r


def child_rng(seed: int, index: int) -> np.random.Generator:
    """RNG stream for worker ``index``: SeedSequence(seed, spawn_key=(index,))."""
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(index,)))


def apply_action(chain: KinematicChain, joints: np.ndarray, action: np.ndarray, max_step: float) -> np.ndarray:
    """Scale a normalized action to a clipped joint increment and clamp to limits."""
    q = np.array(joints, dtype=float, copy=True)
    dq = max_step * np.clip(action, -1.0, 1.0)
    q[..., :ACTION_DIM] = np.clip(q[..., :ACTION_DIM] + dq, chain.lo[:ACTION_DIM], chain.hi[:ACTION_DIM])
    return q


def observation(targets, joints) -> np.ndarray:
    return np.concatenate([np.asarray(targets, dtype=float), np.asarray(joints, dtype=float)], axis=-1)


class ReachEnv:
    """Vectorized reach task: each env chases a uniform workspace target.

    Env ``i`` draws starts and targets from its own child RNG, so results do
    not depend on how many envs are stepped together beyond their index.
    """

    def __init__(self, chain: KinematicChain, workspace: WorkspaceBox, cfg: ReachEnvConfig, seed: int):
        self.chain, self.workspace, self.cfg = chain, workspace, cfg
        n = cfg.num_envs
        self.rngs = [child_rng(seed, i) for i in range(n)]
        self.q = np.tile(chain.home, (n, 1))
        self.w = np.zeros((n, 3))
        self.t = np.zeros(n, dtype=int)
        for i in range(n):
            self._reset(i, first=True)

    def _reset(self, i: int, first: bool = False):
        rng = self.rngs[i]
        u = rng.random()
        if first or u < self.cfg.reset_home_prob:
            self.q[i] = self.chain.home
        elif u < self.cfg.reset_home_prob + self.cfg.reset_random_prob:
            self.q[i, :ACTION_DIM] = rng.uniform(self.chain.lo[:ACTION_DIM], self.chain.hi[:ACTION_DIM])
        # wrist joints carry no EEF information; vary them so the policy ignores them
        self.q[i, ACTION_DIM:] = rng.uniform(self.chain.lo[ACTION_DIM:], self.chain.hi[ACTION_DIM:])
        self.w[i] = self.workspace.sample(rng, 1)[0]
        self.t[i] = 0

    def obs(self) -> np.ndarray:
        return observation(self.w, self.q)

    def step(self, action: np.ndarray):
        """Returns ``(reward, terminal, timeout, final_error, final_obs)``.

        Finished envs auto-reset; ``final_obs`` keeps their pre-reset
        observation for time-limit bootstrapping and ``final_error`` is NaN
        for envs whose episode continues.
        """
        self.q = apply_action(self.chain, self.q, action, self.cfg.max_step)
        self.t += 1
        d = np.linalg.norm(eef_positions(self.chain, self.q) - self.w, axis=-1)
        rew = -(d * d)
        terminal = d < self.cfg.success_radius
        timeout = (self.t >= self.cfg.horizon) & ~terminal
        final = np.where(terminal | timeout, d, np.nan)
        final_obs = self.obs()
        for i in np.flatnonzero(terminal | timeout):
            self._reset(i)
        return rew, terminal, timeout, final, final_obs


@dataclass
class TrainingReport:
    iterations: int
    env_steps: int
    curve: list  # mean final EEF error per update (NaN when no episode ended)
    diverged: bool = False
    reason: str = ""


class TrainingDiverged(RuntimeError):
    def __init__(self, report: TrainingReport, policy: ReachPolicy):
        super().__init__(report.reason)
        self.report, self.policy = report, policy


def _diverging(curve: list, patience: int, factor: float, warmup: int = 0) -> bool:
    """True when the mean of the last ``patience`` points exceeds ``factor`` times
    the best earlier window mean. Early points are biased toward quick
    successes, so the first ``warmup`` updates are ignored."""
    vals = np.array([c for c in curve[warmup:] if math.isfinite(c)])
    if patience <= 0 or len(vals) < 2 * patience:
        return False
    recent = vals[-patience:].mean()
    earlier = vals[:-patience]
    best = min(earlier[i : i + patience].mean() for i in range(0, len(earlier) - patience + 1))
    return bool(recent > factor * best)


def train_reach_policy(
    chain: KinematicChain,
    workspace: WorkspaceBox,
    config: PpoConfig | None = None,
    budget: int = 2_000_000,
    seed: int = 0,
    env_cfg: ReachEnvConfig | None = None,
    log=None,
    save_path=None,
) -> ReachPolicy:
    """Train a reach policy with PPO for ``budget`` environment steps.

    The per-update curve is stored in ``policy.meta["curve"]``. Divergence
    (or a non-finite loss) saves the partial policy to ``save_path`` when
    given and raises :class:`TrainingDiverged`.
    """
    cfg = config or PpoConfig()
    ecfg = env_cfg or ReachEnvConfig()
    if budget < 0:
        raise ValueError("budget must be >= 0")
    torch.manual_seed(seed)
    gen = torch.Generator().manual_seed(seed)
    policy = ReachPolicy(9, ACTION_DIM, cfg, chain)
    policy.meta.update(env=ecfg.to_dict(), seed=seed, chain=chain.to_dict(), chain_hash=chain.content_hash())
    optimizer = torch.optim.Adam(policy.parameters(), lr=cfg.lr)
    env = ReachEnv(chain, workspace, ecfg, seed)
    n, steps = ecfg.num_envs, cfg.steps_per_env
    iterations = budget // (n * steps)
    warmup = 2 * math.ceil(ecfg.horizon / steps)
    curve: list = []
    report = TrainingReport(iterations=0, env_steps=0, curve=curve)
    policy.meta["curve"] = curve

    def fail(reason):
        report.diverged, report.reason = True, reason
        policy.meta["report"] = asdict(report)
        if save_path is not None:
            save_policy(policy, save_path)
        raise TrainingDiverged(report, policy)

    for it in range(iterations):
        in_dim = policy.actor[0].in_features
        obs_n = torch.zeros(steps, n, in_dim)
        acts = torch.zeros(steps, n, ACTION_DIM)
        logps = torch.zeros(steps, n)
        mus = torch.zeros(steps, n, ACTION_DIM)
        sigmas = torch.zeros(steps, n, ACTION_DIM)
        vals = np.zeros((steps, n))
        rews = np.zeros((steps, n))
        dones = np.zeros((steps, n))
        finals = []
        with torch.no_grad():
            for t in range(steps):
                o = policy.features(env.obs())
                if policy.normalizer is not None:
                    policy.normalizer.update(o)
                on = policy.normalize(o)
                dist = policy.distribution(on)
                a = dist.mean + dist.stddev * torch.randn(dist.mean.shape, generator=gen)
                v = policy.value(on)
                obs_n[t] = on
                acts[t], logps[t] = a, dist.log_prob(a).sum(-1)
                mus[t], sigmas[t] = dist.mean, dist.stddev
                vals[t] = v.numpy()
                r, term, tout, fin, fobs = env.step(a.numpy().astype(np.float64))
                if tout.any():
                    # bootstrap through time limits with the value of the final state
                    v_end = policy.value(policy.normalize(policy.features(fobs[tout])))
                    r[tout] += cfg.gamma * v_end.numpy()
                rews[t], dones[t] = r, (term | tout)
                finals.extend(fin[np.isfinite(fin)].tolist())
            last_v = policy.value(policy.normalize(policy.features(env.obs()))).numpy()
        adv, ret = gae_advantages(rews, vals, cfg.gamma, cfg.gae_lambda, dones=dones, bootstrap=last_v)
        buf = RolloutBuffer(
            obs=obs_n.reshape(-1, in_dim),
            actions=acts.reshape(-1, ACTION_DIM),
            log_probs=logps.reshape(-1),
            mu=mus.reshape(-1, ACTION_DIM),
            sigma=sigmas.reshape(-1, ACTION_DIM),
            values=torch.as_tensor(vals.reshape(-1), dtype=torch.float32),
            advantages=torch.as_tensor(adv.reshape(-1), dtype=torch.float32),
            returns=torch.as_tensor(ret.reshape(-1), dtype=torch.float32),
        )
        try:
            stats = ppo_update(policy, buf, optimizer, cfg, generator=gen)
        except PpoDivergenceError as exc:
            fail(str(exc))
        err = float(np.mean(finals)) if finals else float("nan")
        curve.append(err)
        report.iterations, report.env_steps = it + 1, (it + 1) * n * steps
        if log is not None:
            log(dict(iteration=it, env_steps=report.env_steps, mean_final_error=err, **stats))
        if _diverging(curve, ecfg.divergence_patience, ecfg.divergence_factor, warmup):
            fail(f"mean final error rose above {ecfg.divergence_factor}x its best for {ecfg.divergence_patience} updates")
    policy.meta["report"] = asdict(report)
    if save_path is not None:
        save_policy(policy, save_path)
    return policy


def rollout_policy(policy: ReachPolicy, chain: KinematicChain, targets, start, horizon: int, max_step: float,
                   success_radius: float = 0.01, record: bool = False):
    """Deterministic batched rollout; envs freeze once within ``success_radius``.

    Returns ``(final_joints, final_error, steps_taken)`` and, with ``record``,
    the list of per-step joint arrays as a fourth element.
    """
    w = np.atleast_2d(np.asarray(targets, dtype=float))
    q = np.array(np.broadcast_to(start, (w.shape[0], 6)), dtype=float)
    done = np.linalg.norm(eef_positions(chain, q) - w, axis=-1) < success_radius
    steps = np.zeros(w.shape[0], dtype=int)
    trace = []
    for _ in range(horizon):
        if done.all():
            break
        a = policy.act_deterministic(observation(w, q))
        qn = apply_action(chain, q, a, max_step)
        q = np.where(done[:, None], q, qn)
        steps += ~done
        done |= np.linalg.norm(eef_positions(chain, q) - w, axis=-1) < success_radius
        if record:
            trace.append(q.copy())
    err = np.linalg.norm(eef_positions(chain, q) - w, axis=-1)
    return (q, err, steps, trace) if record else (q, err, steps)


def solve_ik_rl(policy: ReachPolicy, chain: KinematicChain, target, horizon: int | None = None,
                workspace: WorkspaceBox | None = None, max_step: float | None = None) -> np.ndarray:
    """Roll the policy out from home toward ``target`` (3,) or (n, 3); returns final joints."""
    env = policy.meta.get("env", {})
    horizon = int(horizon if horizon is not None else env.get("horizon", ReachEnvConfig.horizon))
    max_step = float(max_step if max_step is not None else env.get("max_step", ReachEnvConfig.max_step))
    w = np.asarray(target, dtype=float)
    if workspace is not None and not np.all(workspace.contains(np.atleast_2d(w))):
        raise ValueError(f"target {w.tolist()} lies outside the workspace {workspace}")
    q, _, _ = rollout_policy(policy, chain, np.atleast_2d(w), chain.home, horizon, max_step)
    return q[0] if w.ndim == 1 else q


def save_policy(policy: ReachPolicy, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    torch.save({"state_dict": policy.state_dict(), "meta": policy.meta}, path)
    (path.parent / (path.stem + "_curve.json")).write_text(json.dumps(policy.meta.get("curve", [])))
    return path


def load_policy(path) -> ReachPolicy:
    blob = torch.load(Path(path), weights_only=False)
    meta = blob["meta"]
    cfg = PpoConfig.from_dict(meta["ppo"])
    chain = chain_from_dict(meta["chain"]) if isinstance(meta.get("chain"), dict) else None
    policy = ReachPolicy(9, ACTION_DIM, cfg, chain)
    policy.load_state_dict(blob["state_dict"])
    policy.meta = meta
    policy.eval()
    return policy
