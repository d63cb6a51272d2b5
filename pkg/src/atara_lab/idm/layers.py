"""Direction-Aware Decoder building blocks.

Feature maps are ``(B, C, H, W)`` tensors. Offsets follow the common
modulated-deformable layout: channel ``2j`` is the row (y) offset and
``2j + 1`` the column (x) offset of kernel tap ``j`` (taps in row-major
order over the 3x3 window).
"""

from __future__ import annotations

import math

import torch
from torch import nn

DILATIONS = (1, 2, 3, 6)
ANGLES = (0, 45, 90, 135)


class DilatedBranch(nn.Module):
    """F_d = GELU(conv3x3_dilated(Y)) with same padding."""

    def __init__(self, in_channels: int, out_channels: int, dilation: int):
        super().__init__()
        self.dilation = dilation
        self.conv = nn.Conv2d(in_channels, out_channels, 3, padding=dilation, dilation=dilation)
        self.act = nn.GELU()

    def pre_activation(self, y: torch.Tensor) -> torch.Tensor:
        return self.conv(y)

    def forward(self, y: torch.Tensor) -> torch.Tensor:
        return self.act(self.conv(y))


def dilated_branch(y: torch.Tensor, branch: DilatedBranch) -> torch.Tensor:
    return branch(y)


def receptive_field(dilation: int, kernel: int = 3) -> int:
    return kernel + (kernel - 1) * (dilation - 1)


def aggregate_branches(branches) -> torch.Tensor:
    """Channel concatenation in the given (ascending-dilation) order."""
    branches = list(branches)
    if not branches:
        raise ValueError("need at least one branch")
    size = branches[0].shape[-2:]
    for b in branches[1:]:
        if b.shape[-2:] != size:
            raise ValueError(f"branch spatial sizes differ: {tuple(size)} vs {tuple(b.shape[-2:])}")
    return branches[0] if len(branches) == 1 else torch.cat(branches, dim=1)


def _kernel_taps(kernel: int, dilation: int, device, dtype):
    r = torch.arange(kernel, device=device, dtype=dtype) - (kernel - 1) / 2
    ky, kx = torch.meshgrid(r * dilation, r * dilation, indexing="ij")
    return ky.reshape(-1), kx.reshape(-1)


def bilinear_gather(x: torch.Tensor, py: torch.Tensor, px: torch.Tensor) -> torch.Tensor:
    """Sample ``x`` (B, C, H, W) at fractional pixel positions (B, K, H', W').

    Out-of-range neighbours contribute zero. Returns (B, C, K, H', W').
    """
    b, c, h, w = x.shape
    y0, x0 = torch.floor(py), torch.floor(px)
    wy1, wx1 = py - y0, px - x0
    wy0, wx0 = 1.0 - wy1, 1.0 - wx1
    flat = x.reshape(b, c, h * w)
    out = 0.0
    for yy, wy in ((y0, wy0), (y0 + 1, wy1)):
        for xx, wx in ((x0, wx0), (x0 + 1, wx1)):
            valid = (yy >= 0) & (yy <= h - 1) & (xx >= 0) & (xx <= w - 1)
            idx = (yy.clamp(0, h - 1) * w + xx.clamp(0, w - 1)).long()
            wgt = (wy * wx * valid.to(x.dtype)).unsqueeze(1)  # (B, 1, K, H', W')
            g = torch.gather(flat, 2, idx.reshape(b, 1, -1).expand(b, c, -1))
            out = out + g.reshape(b, c, *idx.shape[1:]) * wgt
    return out


def modulated_deform_conv(x, weight, bias, offset, mask, dilation: int = 1) -> torch.Tensor:
    """Modulated deformable 3x3-style convolution with stride 1 and same padding.

    ``weight`` is (O, C, k, k); ``offset`` (B, 2k^2, H, W); ``mask`` (B, k^2, H, W).
    """
    b, c, h, w = x.shape
    o, _, kh, kw = weight.shape
    k = kh * kw
    ky, kx = _kernel_taps(kh, dilation, x.device, x.dtype)
    gy = torch.arange(h, device=x.device, dtype=x.dtype).view(1, 1, h, 1)
    gx = torch.arange(w, device=x.device, dtype=x.dtype).view(1, 1, 1, w)
    off = offset.reshape(b, k, 2, h, w)
    py = gy + ky.view(1, k, 1, 1) + off[:, :, 0]
    px = gx + kx.view(1, k, 1, 1) + off[:, :, 1]
    cols = bilinear_gather(x, py, px) * mask.unsqueeze(1)  # (B, C, K, H, W)
    out = torch.einsum("bckhw,ock->bohw", cols, weight.reshape(o, c, k))
    if bias is not None:
        out = out + bias.view(1, o, 1, 1)
    return out


class DeformableConv(nn.Module):
    """(dp, m) = phi(F); Y' = sum_k w_k * m_k * F(p + p_k + dp_k).

    phi is a 3x3 convolution initialized to zero offsets and near-unit
    modulation so the layer starts out as a plain convolution.
    """

    def __init__(self, in_channels: int, out_channels: int, kernel: int = 3, mask_logit_init: float = 8.0):
        super().__init__()
        self.kernel = kernel
        k = kernel * kernel
        self.weight = nn.Parameter(torch.empty(out_channels, in_channels, kernel, kernel))
        self.bias = nn.Parameter(torch.zeros(out_channels))
        nn.init.kaiming_uniform_(self.weight, a=math.sqrt(5))
        self.phi = nn.Conv2d(in_channels, 3 * k, kernel, padding=kernel // 2)
        nn.init.zeros_(self.phi.weight)
        with torch.no_grad():
            self.phi.bias.zero_()
            self.phi.bias[2 * k :] = mask_logit_init

    def offsets_and_mask(self, f: torch.Tensor):
        k = self.kernel * self.kernel
        raw = self.phi(f)
        return raw[:, : 2 * k], torch.sigmoid(raw[:, 2 * k :])

    def forward(self, f: torch.Tensor) -> torch.Tensor:
        offset, mask = self.offsets_and_mask(f)
        return modulated_deform_conv(f, self.weight, self.bias, offset, mask)


def rotation_grid(h: int, w: int, angle_deg: float, device=None, dtype=torch.float32):
    """Source positions (row, col) for rotating an (h, w) grid about its center."""
    t = math.radians(angle_deg)
    c, s = math.cos(t), math.sin(t)
    cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
    yy, xx = torch.meshgrid(
        torch.arange(h, device=device, dtype=dtype) - cy,
        torch.arange(w, device=device, dtype=dtype) - cx,
        indexing="ij",
    )
    src_x = c * xx - s * yy + cx
    src_y = s * xx + c * yy + cy
    return src_y, src_x


def rotate_features(y: torch.Tensor, angle_deg: float) -> torch.Tensor:
    """Rotate every channel about the grid center.

    Multiples of 90 degrees are exact index permutations; other angles use
    bilinear resampling with zeros outside the grid.
    """
    a = angle_deg % 360
    if a == 0:
        return y
    if a % 90 == 0 and y.shape[-1] == y.shape[-2]:
        return torch.rot90(y, k=int(a // 90), dims=(-2, -1))
    b, ch, h, w = y.shape
    sy, sx = rotation_grid(h, w, a, y.device, y.dtype)
    out = bilinear_gather(y, sy.expand(b, 1, h, w), sx.expand(b, 1, h, w))
    return out[:, :, 0]


def angle_pool(y: torch.Tensor, angles=ANGLES) -> torch.Tensor:
    """Concatenate global average pools of the map rotated by each angle."""
    return torch.cat([rotate_features(y, a).mean(dim=(-2, -1)) for a in angles], dim=1)
