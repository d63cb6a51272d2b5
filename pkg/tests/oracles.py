"""Independent brute-force reference implementations used by the tests."""

from collections import deque

import numpy as np
from scipy.spatial.transform import Rotation


def _homogeneous(rot=None, trans=None):
    t = np.eye(4)
    if rot is not None:
        t[:3, :3] = rot
    if trans is not None:
        t[:3, 3] = trans
    return t


def fk_oracle(chain, joints):
    """Product of 4x4 transforms: base, then per link Trans(offset) Rot(rpy) Rot(axis, q) Trans(length x)."""
    t = _homogeneous(Rotation.from_euler("xyz", chain.base_rpy).as_matrix(), chain.base_position)
    for link, q in zip(chain.links, joints):
        t = t @ _homogeneous(trans=link.offset)
        t = t @ _homogeneous(Rotation.from_euler("xyz", link.rpy).as_matrix())
        t = t @ _homogeneous(Rotation.from_rotvec(np.asarray(link.rotation_axis) * q).as_matrix())
        t = t @ _homogeneous(trans=(link.length, 0.0, 0.0))
    return t


def bfs_component(image, row, col, tol):
    """4-connected BFS over pixels within ``tol`` (per channel) of the seed colour."""
    img = image.astype(int)
    h, w = img.shape[:2]
    seed = img[row, col]
    mask = np.zeros((h, w), dtype=bool)
    queue = deque([(row, col)])
    mask[row, col] = True
    while queue:
        r, c = queue.popleft()
        for dr, dc in ((1, 0), (-1, 0), (0, 1), (0, -1)):
            rr, cc = r + dr, c + dc
            if 0 <= rr < h and 0 <= cc < w and not mask[rr, cc] and np.all(np.abs(img[rr, cc] - seed) <= tol):
                mask[rr, cc] = True
                queue.append((rr, cc))
    return mask


def conv2d_oracle(x, weight, bias, dilation=1, padding=0):
    """Sliding-window sum over (C, H, W) input with (O, C, k, k) weights."""
    c, h, w = x.shape
    o, _, k, _ = weight.shape
    xp = np.zeros((c, h + 2 * padding, w + 2 * padding))
    xp[:, padding : padding + h, padding : padding + w] = x
    oh = h + 2 * padding - dilation * (k - 1)
    ow = w + 2 * padding - dilation * (k - 1)
    out = np.zeros((o, oh, ow))
    for oc in range(o):
        for i in range(oh):
            for j in range(ow):
                acc = bias[oc] if bias is not None else 0.0
                for a in range(k):
                    for b in range(k):
                        acc += np.dot(weight[oc, :, a, b], xp[:, i + a * dilation, j + b * dilation])
                out[oc, i, j] = acc
    return out


def bilinear_zero(x, y, xq):
    """Bilinear sample of (C, H, W) map at row ``y``, column ``xq``; zero outside."""
    c, h, w = x.shape
    y0, x0 = int(np.floor(y)), int(np.floor(xq))
    out = np.zeros(c)
    for yy, wy in ((y0, 1 - (y - y0)), (y0 + 1, y - y0)):
        for xx, wx in ((x0, 1 - (xq - x0)), (x0 + 1, xq - x0)):
            if 0 <= yy < h and 0 <= xx < w:
                out += wy * wx * x[:, yy, xx]
    return out


def deform_conv_oracle(x, weight, bias, offset, mask, dilation=1):
    """Per-location modulated deformable 3x3 convolution with same padding.

    ``offset`` is (2k, H, W) with (dy, dx) pairs per tap in row-major tap order.
    """
    c, h, w = x.shape
    o, _, k, _ = weight.shape
    pad = dilation * (k // 2)
    out = np.zeros((o, h, w))
    for i in range(h):
        for j in range(w):
            cols = []
            for t in range(k * k):
                a, b = divmod(t, k)
                py = i - pad + a * dilation + offset[2 * t, i, j]
                px = j - pad + b * dilation + offset[2 * t + 1, i, j]
                cols.append(mask[t, i, j] * bilinear_zero(x, py, px))
            cols = np.stack(cols, axis=1)  # (C, k*k)
            out[:, i, j] = np.einsum("ock,ck->o", weight.reshape(o, c, k * k), cols) + (bias if bias is not None else 0)
    return out


def rotate_oracle(x, angle_deg):
    """Rotate each channel about the grid centre: out(p) = in(R(theta) p), zero outside."""
    c, h, w = x.shape
    th = np.radians(angle_deg)
    cy, cx = (h - 1) / 2, (w - 1) / 2
    out = np.zeros_like(x, dtype=float)
    rot = np.array([[np.cos(th), -np.sin(th)], [np.sin(th), np.cos(th)]])
    for i in range(h):
        for j in range(w):
            sx, sy = rot @ np.array([j - cx, i - cy])
            out[:, i, j] = bilinear_zero(x, sy + cy, sx + cx)
    return out


def gae_oracle(rewards, values, bootstrap, gamma, lam):
    """O(T^2) direct sum of discounted TD residuals (no terminations)."""
    t_len = len(rewards)
    v = np.append(values, bootstrap)
    delta = rewards + gamma * v[1:] - v[:-1]
    adv = np.zeros(t_len)
    for t in range(t_len):
        adv[t] = sum((gamma * lam) ** (k - t) * delta[k] for k in range(t, t_len))
    return adv
