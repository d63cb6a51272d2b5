"""NumPy/SciPy fallbacks with the same contracts as the compiled kernels."""

import numpy as np
from scipy import ndimage

_FOUR_CONNECTED = ndimage.generate_binary_structure(2, 1)


def draw_capsules(img, caps, colors):
    h, w = img.shape[:2]
    for (u0, v0, u1, v1, r0, r1), color in zip(caps, colors):
        rmax = max(r0, r1)
        jlo = max(int(np.floor(min(u0, u1) - rmax - 1.0)), 0)
        jhi = min(int(np.ceil(max(u0, u1) + rmax + 1.0)), w - 1)
        ilo = max(int(np.floor(min(v0, v1) - rmax - 1.0)), 0)
        ihi = min(int(np.ceil(max(v0, v1) + rmax + 1.0)), h - 1)
        if jlo > jhi or ilo > ihi:
            continue
        jj, ii = np.meshgrid(np.arange(jlo, jhi + 1), np.arange(ilo, ihi + 1))
        px, py = jj - u0, ii - v0
        du, dv = u1 - u0, v1 - v0
        len2 = du * du + dv * dv
        t = np.clip((px * du + py * dv) / len2, 0.0, 1.0) if len2 > 0 else np.zeros_like(px, float)
        d = np.hypot(px - t * du, py - t * dv)
        cov = np.clip(r0 + t * (r1 - r0) - d + 0.5, 0.0, 1.0)[..., None]
        patch = img[ilo : ihi + 1, jlo : jhi + 1]
        blended = patch * (1.0 - cov) + np.asarray(color)[None, None, :] * cov
        img[ilo : ihi + 1, jlo : jhi + 1] = np.where(cov > 0, blended, patch).astype(img.dtype)


def flood_fill(img, row, col, tol):
    seed = img[row, col].astype(np.int16)
    close = np.all(np.abs(img.astype(np.int16) - seed) <= tol, axis=-1)
    labels, _ = ndimage.label(close, structure=_FOUR_CONNECTED)
    return labels == labels[row, col]
