"""Encoder, DAD / MLP-regressor heads and the arm-decoupled IDM."""

from __future__ import annotations

import numpy as np
import torch
from torch import nn

from ..kinematics import GRIPPER_INDICES, KinematicChain
from .config import DadConfig, EncoderConfig, MlpRegressorConfig, ModelConfig
from .layers import DeformableConv, DilatedBranch, aggregate_branches, angle_pool


class PatchEncoder(nn.Module):
    """Patchwise encoder with register tokens.

    A stride-p/2 patchify convolution and a 3x3 convolution are followed by a
    stride-2 merge, giving one token per p x p patch; ``depth`` pre-norm
    transformer blocks then mix the patch tokens together with
    ``register_tokens`` learned extra tokens. The registers are dropped and
    the patch tokens reshaped to a ``(C, g, g)`` feature map.
    """

    def __init__(self, cfg: EncoderConfig):
        super().__init__()
        self.cfg = cfg
        c0, c1 = cfg.stem_channels
        half = cfg.patch_size // 2
        self.stem = nn.Sequential(
            nn.Conv2d(3, c0, half, stride=half),
            nn.GELU(),
            nn.Conv2d(c0, c1, 3, padding=1),
            nn.GELU(),
            nn.Conv2d(c1, cfg.embed_dim, 2, stride=2),
        )
        g = cfg.grid
        self.pos = nn.Parameter(torch.zeros(1, g * g, cfg.embed_dim))
        nn.init.trunc_normal_(self.pos, std=0.02)
        self.registers = nn.Parameter(torch.zeros(1, cfg.register_tokens, cfg.embed_dim))
        nn.init.trunc_normal_(self.registers, std=0.02)
        layer = nn.TransformerEncoderLayer(
            cfg.embed_dim, cfg.heads, int(cfg.embed_dim * cfg.mlp_ratio), dropout=0.0,
            activation="gelu", batch_first=True, norm_first=True,
        )
        self.blocks = nn.TransformerEncoder(layer, cfg.depth, enable_nested_tensor=False) if cfg.depth else None
        self.norm = nn.LayerNorm(cfg.embed_dim)

    @property
    def out_channels(self) -> int:
        return self.cfg.embed_dim

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        s = self.cfg.input_size
        if x.shape[-2:] != (s, s):
            raise ValueError(f"encoder expects {s}x{s} input, got {tuple(x.shape[-2:])}")
        f = self.stem(x)
        b, c, g, _ = f.shape
        tok = f.flatten(2).transpose(1, 2) + self.pos
        r = self.cfg.register_tokens
        if r:
            tok = torch.cat([self.registers.expand(b, -1, -1), tok], dim=1)
        if self.blocks is not None:
            tok = self.blocks(tok)
        tok = self.norm(tok[:, r:])
        return tok.transpose(1, 2).reshape(b, c, g, g)


def encode(image: torch.Tensor, encoder: PatchEncoder) -> torch.Tensor:
    return encoder(image)


class DadHead(nn.Module):
    """Dilated branches -> concat -> deformable conv -> angle pooling -> MLP."""

    def __init__(self, in_channels: int, out_dim: int, cfg: DadConfig):
        super().__init__()
        self.cfg = cfg
        self.branches = nn.ModuleList(DilatedBranch(in_channels, cfg.branch_channels, d) for d in cfg.dilations)
        self.deform = DeformableConv(len(cfg.dilations) * cfg.branch_channels, cfg.deform_channels,
                                     cfg.kernel, cfg.mask_logit_init)
        self.mlp = nn.Sequential(nn.Linear(cfg.head_width, cfg.hidden), nn.GELU(), nn.Linear(cfg.hidden, out_dim))

    def pooled(self, y: torch.Tensor) -> torch.Tensor:
        f = aggregate_branches([b(y) for b in self.branches])
        return angle_pool(self.deform(f), self.cfg.angles)

    def forward(self, y: torch.Tensor) -> torch.Tensor:
        return self.mlp(self.pooled(y))


class MlpRegressorHead(nn.Module):
    """1x1 conv to a few channels, flatten, two-layer MLP."""

    def __init__(self, in_channels: int, grid: int, out_dim: int, cfg: MlpRegressorConfig):
        super().__init__()
        self.reduce = nn.Conv2d(in_channels, cfg.reduce_channels, 1)
        self.mlp = nn.Sequential(
            nn.Linear(cfg.reduce_channels * grid * grid, cfg.hidden), nn.GELU(), nn.Linear(cfg.hidden, out_dim)
        )

    def forward(self, y: torch.Tensor) -> torch.Tensor:
        return self.mlp(self.reduce(y).flatten(1))


class OutputScale(nn.Module):
    """Fixed affine map from unit-scale head outputs to joint units."""

    def __init__(self, lo, hi):
        super().__init__()
        lo, hi = torch.as_tensor(lo, dtype=torch.float32), torch.as_tensor(hi, dtype=torch.float32)
        self.register_buffer("center", (lo + hi) / 2)
        self.register_buffer("radius", (hi - lo) / 2)

    def forward(self, x):
        return self.center + self.radius * x


def action_bounds(chains: tuple[KinematicChain, KinematicChain]):
    """Per-dimension (lo, hi) of the 14-dim action; grippers span [0, 1]."""
    lo = np.concatenate([chains[0].lo, [0.0], chains[1].lo, [0.0]])
    hi = np.concatenate([chains[0].hi, [1.0], chains[1].hi, [1.0]])
    return lo, hi


class SubModel(nn.Module):
    def __init__(self, encoder: PatchEncoder, head: nn.Module, lo, hi):
        super().__init__()
        self.encoder = encoder
        self.head = head
        self.scale = OutputScale(lo, hi)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.scale(self.head(self.encoder(x)))

    def from_features(self, y: torch.Tensor) -> torch.Tensor:
        """Head applied to an externally supplied feature map."""
        return self.scale(self.head(y))


ARM_INPUTS = ("left", "right", "left_wrist", "right_wrist")


class IdmModel(nn.Module):
    """Inverse dynamics model mapping views to the 14-dim joint vector.

    Decoupled: per-arm heads on the two high-view crops (6 outputs each) and
    per-wrist gripper heads (1 output each). Coupled: one head with 14
    outputs on the unsplit high view.
    """

    def __init__(self, cfg: ModelConfig, chains: tuple[KinematicChain, KinematicChain]):
        super().__init__()
        self.cfg = cfg
        lo, hi = action_bounds(chains)
        enc_cfg = cfg.encoder
        shared = PatchEncoder(enc_cfg) if cfg.shared_encoder else None

        def encoder():
            return shared if shared is not None else PatchEncoder(enc_cfg)

        def head(out_dim, kind):
            if kind == "dad":
                return DadHead(enc_cfg.embed_dim, out_dim, cfg.dad)
            return MlpRegressorHead(enc_cfg.embed_dim, enc_cfg.grid, out_dim, cfg.mlp)

        if cfg.decoupled:
            self.left_arm = SubModel(encoder(), head(6, cfg.head), lo[0:6], hi[0:6])
            self.right_arm = SubModel(encoder(), head(6, cfg.head), lo[7:13], hi[7:13])
            self.left_wrist = SubModel(encoder(), head(1, "mlp"), lo[6:7], hi[6:7])
            self.right_wrist = SubModel(encoder(), head(1, "mlp"), lo[13:14], hi[13:14])
        else:
            self.coupled = SubModel(encoder(), head(14, cfg.head), lo, hi)

    @property
    def inputs(self) -> tuple:
        return ARM_INPUTS if self.cfg.decoupled else ("high",)

    def encoder_parameters(self):
        seen = set()
        for m in self.modules():
            if isinstance(m, PatchEncoder):
                for p in m.parameters():
                    if id(p) not in seen:
                        seen.add(id(p))
                        yield p

    def head_parameters(self):
        enc = {id(p) for p in self.encoder_parameters()}
        return [p for p in self.parameters() if id(p) not in enc]

    def forward(self, batch: dict) -> torch.Tensor:
        """Raw (unclamped) 14-dim predictions from preprocessed input tensors."""
        if not self.cfg.decoupled:
            return self.coupled(batch["high"])
        left = self.left_arm(batch["left"])
        right = self.right_arm(batch["right"])
        gl = self.left_wrist(batch["left_wrist"])
        gr = self.right_wrist(batch["right_wrist"])
        return assemble_action(left, gl, right, gr)


def assemble_action(left6, left_grip, right6, right_grip):
    """Layout: left joints 0-5, left gripper 6, right joints 7-12, right gripper 13."""
    if isinstance(left6, torch.Tensor):
        lead = left6.shape[:-1]
        lg = torch.as_tensor(left_grip, dtype=left6.dtype).reshape(*lead, 1)
        rg = torch.as_tensor(right_grip, dtype=left6.dtype).reshape(*lead, 1)
        return torch.cat([left6, lg, right6, rg], dim=-1)
    left6, right6 = np.asarray(left6, dtype=float), np.asarray(right6, dtype=float)
    lead = left6.shape[:-1]
    lg = np.asarray(left_grip, dtype=float).reshape(*lead, 1)
    rg = np.asarray(right_grip, dtype=float).reshape(*lead, 1)
    return np.concatenate([left6, lg, right6, rg], axis=-1)


def split_action(action):
    a = action
    return a[..., 0:6], a[..., 6], a[..., 7:13], a[..., 13]


def clamp_grippers(action):
    """Clamp the gripper entries to [0, 1] (inference only)."""
    if isinstance(action, torch.Tensor):
        out = action.clone()
        for i in GRIPPER_INDICES:
            out[..., i] = out[..., i].clamp(0.0, 1.0)
        return out
    out = np.array(action, dtype=float, copy=True)
    for i in GRIPPER_INDICES:
        out[..., i] = np.clip(out[..., i], 0.0, 1.0)
    return out
