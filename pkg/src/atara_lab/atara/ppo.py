"""PPO with clipped surrogate, clipped value loss and a KL-adaptive step size."""

from __future__ import annotations

import copy
import math
from dataclasses import dataclass, field, asdict, fields

import numpy as np
import torch
from torch import nn

from ..kinematics import KinematicChain, eef_positions


@dataclass
class PpoConfig:
    clip: float = 0.2
    value_clip: bool = True
    value_coeff: float = 1.0
    desired_kl: float = 0.01
    entropy_coeff: float = 0.01
    gamma: float = 0.98
    gae_lambda: float = 0.95
    grad_clip: float = 1.0
    lr: float = 1e-3
    schedule: str = "adaptive"  # adaptive | fixed
    minibatches: int = 4
    steps_per_env: int = 24
    epochs: int = 5
    actor_hidden: list = field(default_factory=lambda: [512, 256, 128])
    critic_hidden: list = field(default_factory=lambda: [512, 256, 128])
    activation: str = "elu"
    empirical_normalization: bool = True
    init_noise_std: float = 1.0
    eef_error_feature: bool = True  # append w - FK(q), computed from the observation
    error_direction_feature: bool = True  # also append the unit error direction and its norm
    lr_min: float = 1e-5
    lr_max: float = 1e-2

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict | None) -> "PpoConfig":
        d = dict(d or {})
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown PPO config keys: {sorted(unknown)}")
        return cls(**d)


class PpoDivergenceError(RuntimeError):
    """Raised when a loss becomes non-finite; parameters are left untouched."""


_ACTIVATIONS = {"elu": nn.ELU, "relu": nn.ReLU, "tanh": nn.Tanh, "gelu": nn.GELU}


def mlp(sizes, activation: str = "elu") -> nn.Sequential:
    act = _ACTIVATIONS[activation.lower()]
    layers = []
    for i in range(len(sizes) - 1):
        layers.append(nn.Linear(sizes[i], sizes[i + 1]))
        if i < len(sizes) - 2:
            layers.append(act())
    return nn.Sequential(*layers)


class EmpiricalNormalizer(nn.Module):
    """Running mean/variance normalizer (parallel Welford update)."""

    def __init__(self, dim: int, eps: float = 1e-2):
        super().__init__()
        self.eps = eps
        self.register_buffer("mean", torch.zeros(dim, dtype=torch.float64))
        self.register_buffer("var", torch.ones(dim, dtype=torch.float64))
        self.register_buffer("count", torch.zeros((), dtype=torch.float64))

    @torch.no_grad()
    def update(self, x: torch.Tensor):
        x = x.reshape(-1, x.shape[-1]).to(torch.float64)
        n = x.shape[0]
        if n == 0:
            return
        bmean = x.mean(0)
        bvar = x.var(0, unbiased=False)
        tot = self.count + n
        delta = bmean - self.mean
        self.mean += delta * n / tot
        m2 = self.var * self.count + bvar * n + delta**2 * self.count * n / tot
        self.var.copy_(m2 / tot)
        self.count.copy_(tot)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        std = torch.sqrt(self.var + self.eps**2)
        return ((x.to(torch.float64) - self.mean) / std).to(x.dtype)


class ReachPolicy(nn.Module):
    """Gaussian actor and value critic over observations ``[target(3), joints(6)]``.

    With ``eef_error_feature`` the networks also see ``target - FK(joints)``,
    derived from the observation through the chain's forward kinematics.
    Actions are normalized joint increments for the first ``action_dim``
    joints; the environment scales and clips them.
    """

    def __init__(self, obs_dim: int = 9, action_dim: int = 3, config: PpoConfig | None = None,
                 chain: KinematicChain | None = None):
        super().__init__()
        cfg = config or PpoConfig()
        if cfg.eef_error_feature and chain is None:
            raise ValueError("eef_error_feature needs the kinematic chain")
        self.chain = chain if cfg.eef_error_feature else None
        self.obs_dim, self.action_dim = obs_dim, action_dim
        self.direction = bool(cfg.error_direction_feature and self.chain is not None)
        in_dim = obs_dim + (3 if self.chain is not None else 0) + (4 if self.direction else 0)
        self.actor = mlp([in_dim, *cfg.actor_hidden, action_dim], cfg.activation)
        self.critic = mlp([in_dim, *cfg.critic_hidden, 1], cfg.activation)
        self.log_std = nn.Parameter(torch.full((action_dim,), math.log(cfg.init_noise_std)))
        self.normalizer = EmpiricalNormalizer(in_dim) if cfg.empirical_normalization else None
        self.meta: dict = {"ppo": cfg.to_dict()}

    def features(self, obs) -> torch.Tensor:
        """Network input for raw observations ``[w, q]`` (before normalization)."""
        obs = np.asarray(obs, dtype=np.float64)
        if self.chain is not None:
            err = obs[..., :3] - eef_positions(self.chain, obs[..., 3:9])
            extra = [err]
            if self.direction:
                norm = np.linalg.norm(err, axis=-1, keepdims=True)
                extra += [err / np.maximum(norm, 1e-3), norm]
            obs = np.concatenate([obs, *extra], axis=-1)
        return torch.as_tensor(obs, dtype=torch.float32)

    def normalize(self, obs: torch.Tensor) -> torch.Tensor:
        return self.normalizer(obs) if self.normalizer is not None else obs

    def distribution(self, obs_n: torch.Tensor) -> torch.distributions.Normal:
        mean = self.actor(obs_n)
        return torch.distributions.Normal(mean, self.log_std.exp().expand_as(mean))

    def value(self, obs_n: torch.Tensor) -> torch.Tensor:
        return self.critic(obs_n).squeeze(-1)

    @torch.no_grad()
    def act_deterministic(self, obs) -> np.ndarray:
        return self.actor(self.normalize(self.features(obs))).numpy().astype(np.float64)


def gae_advantages(rewards, values, gamma: float, lam: float, dones=None, bootstrap=None):
    """Generalized advantage estimates along the first (time) axis.

    ``values`` has either the same length as ``rewards`` (then ``bootstrap``
    gives V(s_T)) or one extra trailing entry holding the bootstrap value.
    ``dones[t]`` marks a terminal transition at step t (no bootstrapping
    through it). Returns ``(advantages, returns)``.
    """
    r = np.asarray(rewards, dtype=np.float64)
    v = np.asarray(values, dtype=np.float64)
    t_len = r.shape[0]
    if v.shape[0] == t_len + 1:
        v_next_last = v[-1]
        v = v[:-1]
    elif v.shape[0] == t_len:
        v_next_last = np.zeros_like(v[0]) if bootstrap is None else np.asarray(bootstrap, dtype=np.float64)
    else:
        raise ValueError(f"values length {v.shape[0]} does not match rewards length {t_len}")
    if v.shape != r.shape:
        raise ValueError(f"rewards shape {r.shape} and values shape {v.shape} differ")
    d = np.zeros_like(r) if dones is None else np.asarray(dones, dtype=np.float64)
    if d.shape != r.shape:
        raise ValueError(f"dones shape {d.shape} does not match rewards shape {r.shape}")
    adv = np.zeros_like(r)
    last = np.zeros_like(r[0]) if t_len else 0.0
    for t in reversed(range(t_len)):
        v_next = v_next_last if t == t_len - 1 else v[t + 1]
        nonterm = 1.0 - d[t]
        delta = r[t] + gamma * v_next * nonterm - v[t]
        last = delta + gamma * lam * nonterm * last
        adv[t] = last
    return adv, adv + v


def adapt_learning_rate(lr: float, kl: float, cfg: PpoConfig) -> float:
    """Halve above twice the KL target, grow by 1.5 below half of it."""
    if kl > 2.0 * cfg.desired_kl:
        lr = lr / 2.0
    elif kl < cfg.desired_kl / 2.0:
        lr = lr * 1.5
    return float(min(max(lr, cfg.lr_min), cfg.lr_max))


def clipped_surrogate(ratio: torch.Tensor, adv: torch.Tensor, clip: float) -> torch.Tensor:
    """Per-sample PPO objective to maximize: min(r A, clip(r) A)."""
    return torch.min(ratio * adv, torch.clamp(ratio, 1.0 - clip, 1.0 + clip) * adv)


def gaussian_kl(mu_old, sigma_old, mu_new, sigma_new) -> torch.Tensor:
    """KL(old || new) summed over action dims."""
    return torch.sum(
        torch.log(sigma_new / sigma_old + 1e-5)
        + (sigma_old**2 + (mu_old - mu_new) ** 2) / (2.0 * sigma_new**2)
        - 0.5,
        dim=-1,
    )


@dataclass
class RolloutBuffer:
    """Flattened transitions of one rollout (T steps x N envs)."""

    obs: torch.Tensor  # normalized observations
    actions: torch.Tensor
    log_probs: torch.Tensor
    mu: torch.Tensor
    sigma: torch.Tensor
    values: torch.Tensor
    advantages: torch.Tensor
    returns: torch.Tensor

    def __len__(self):
        return self.obs.shape[0]


def ppo_update(policy: ReachPolicy, buffer: RolloutBuffer, optimizer, cfg: PpoConfig, generator=None) -> dict:
    """Run ``epochs`` x ``minibatches`` clipped PPO steps on ``buffer``.

    A non-finite loss restores the parameters and optimizer state from before
    the call and raises :class:`PpoDivergenceError`.
    """
    n = len(buffer)
    if n < cfg.minibatches:
        raise ValueError(f"buffer of {n} transitions cannot form {cfg.minibatches} minibatches")
    saved = (copy.deepcopy(policy.state_dict()), copy.deepcopy(optimizer.state_dict()))
    mb = n // cfg.minibatches
    stats = {"surrogate": 0.0, "value": 0.0, "entropy": 0.0, "kl": 0.0, "lr": 0.0}
    updates = 0
    params = [p for p in policy.parameters() if p.requires_grad]
    for _ in range(cfg.epochs):
        perm = torch.randperm(n, generator=generator)
        for k in range(cfg.minibatches):
            idx = perm[k * mb : (k + 1) * mb]
            obs, act = buffer.obs[idx], buffer.actions[idx]
            adv = buffer.advantages[idx]
            adv = (adv - adv.mean()) / (adv.std() + 1e-8)
            dist = policy.distribution(obs)
            logp = dist.log_prob(act).sum(-1)
            entropy = dist.entropy().sum(-1).mean()
            value = policy.value(obs)

            with torch.no_grad():
                kl = gaussian_kl(buffer.mu[idx], buffer.sigma[idx], dist.mean, dist.stddev).mean().item()
            if cfg.schedule == "adaptive" and math.isfinite(kl):
                lr = adapt_learning_rate(optimizer.param_groups[0]["lr"], kl, cfg)
                for g in optimizer.param_groups:
                    g["lr"] = lr

            ratio = torch.exp(logp - buffer.log_probs[idx])
            surrogate = -clipped_surrogate(ratio, adv, cfg.clip).mean()
            ret, v_old = buffer.returns[idx], buffer.values[idx]
            if cfg.value_clip:
                v_clipped = v_old + (value - v_old).clamp(-cfg.clip, cfg.clip)
                value_loss = torch.max((value - ret) ** 2, (v_clipped - ret) ** 2).mean()
            else:
                value_loss = ((value - ret) ** 2).mean()
            loss = surrogate + cfg.value_coeff * value_loss - cfg.entropy_coeff * entropy
            if not torch.isfinite(loss):
                policy.load_state_dict(saved[0])
                optimizer.load_state_dict(saved[1])
                raise PpoDivergenceError(
                    f"non-finite PPO loss (surrogate={surrogate.item()}, value={value_loss.item()}, kl={kl})"
                )
            optimizer.zero_grad()
            loss.backward()
            nn.utils.clip_grad_norm_(params, cfg.grad_clip)
            optimizer.step()

            stats["surrogate"] += surrogate.item()
            stats["value"] += value_loss.item()
            stats["entropy"] += entropy.item()
            stats["kl"] += kl
            updates += 1
    for k in ("surrogate", "value", "entropy", "kl"):
        stats[k] /= updates
    stats["lr"] = optimizer.param_groups[0]["lr"]
    return stats
