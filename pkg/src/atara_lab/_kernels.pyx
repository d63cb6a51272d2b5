# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled inner loops: anti-aliased capsule rasterization and flood fill."""

import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt, floor, ceil

cnp.import_array()


def draw_capsules(float[:, :, ::1] img, double[:, ::1] caps, double[:, ::1] colors):
    """Paint capsules in the given order onto ``img`` (H, W, 3) in place.

    ``caps`` rows are (u0, v0, u1, v1, r0, r1) in pixels, pixel (row i, col j)
    has its center at (u=j, v=i). Coverage is a 1-px linear ramp on the edge.
    """
    cdef Py_ssize_t n = caps.shape[0]
    cdef Py_ssize_t h = img.shape[0]
    cdef Py_ssize_t w = img.shape[1]
    cdef Py_ssize_t k, i, j, c
    cdef double u0, v0, u1, v1, r0, r1, du, dv, len2, t, px, py, r, dx, dy, d, cov, rmax
    cdef int ilo, ihi, jlo, jhi
    for k in range(n):
        u0 = caps[k, 0]; v0 = caps[k, 1]; u1 = caps[k, 2]; v1 = caps[k, 3]
        r0 = caps[k, 4]; r1 = caps[k, 5]
        rmax = r0 if r0 > r1 else r1
        jlo = <int>floor((u0 if u0 < u1 else u1) - rmax - 1.0)
        jhi = <int>ceil((u0 if u0 > u1 else u1) + rmax + 1.0)
        ilo = <int>floor((v0 if v0 < v1 else v1) - rmax - 1.0)
        ihi = <int>ceil((v0 if v0 > v1 else v1) + rmax + 1.0)
        if jlo < 0: jlo = 0
        if ilo < 0: ilo = 0
        if jhi > w - 1: jhi = <int>(w - 1)
        if ihi > h - 1: ihi = <int>(h - 1)
        du = u1 - u0
        dv = v1 - v0
        len2 = du * du + dv * dv
        for i in range(ilo, ihi + 1):
            for j in range(jlo, jhi + 1):
                px = j - u0
                py = i - v0
                if len2 > 0.0:
                    t = (px * du + py * dv) / len2
                    if t < 0.0: t = 0.0
                    elif t > 1.0: t = 1.0
                else:
                    t = 0.0
                dx = px - t * du
                dy = py - t * dv
                d = sqrt(dx * dx + dy * dy)
                r = r0 + t * (r1 - r0)
                cov = r - d + 0.5
                if cov <= 0.0:
                    continue
                if cov > 1.0:
                    cov = 1.0
                for c in range(3):
                    img[i, j, c] = <float>(img[i, j, c] * (1.0 - cov) + colors[k, c] * cov)


def flood_fill(const unsigned char[:, :, ::1] img, Py_ssize_t row, Py_ssize_t col, int tol):
    """4-connected region of pixels within ``tol`` (per channel) of the seed color."""
    cdef Py_ssize_t h = img.shape[0]
    cdef Py_ssize_t w = img.shape[1]
    mask_arr = np.zeros((h, w), dtype=np.uint8)
    cdef unsigned char[:, ::1] mask = mask_arr
    queue_arr = np.empty(h * w, dtype=np.intp)
    cdef Py_ssize_t[::1] queue = queue_arr
    cdef Py_ssize_t head = 0, tail = 0, idx, r, c, nr, nc, k
    cdef int s0 = img[row, col, 0], s1 = img[row, col, 1], s2 = img[row, col, 2]
    cdef int d
    cdef Py_ssize_t[4] drs = [-1, 1, 0, 0]
    cdef Py_ssize_t[4] dcs = [0, 0, -1, 1]
    mask[row, col] = 1
    queue[tail] = row * w + col
    tail += 1
    while head < tail:
        idx = queue[head]
        head += 1
        r = idx // w
        c = idx - r * w
        for k in range(4):
            nr = r + drs[k]
            nc = c + dcs[k]
            if nr < 0 or nr >= h or nc < 0 or nc >= w or mask[nr, nc]:
                continue
            d = img[nr, nc, 0] - s0
            if d > tol or d < -tol:
                continue
            d = img[nr, nc, 1] - s1
            if d > tol or d < -tol:
                continue
            d = img[nr, nc, 2] - s2
            if d > tol or d < -tol:
                continue
            mask[nr, nc] = 1
            queue[tail] = nr * w + nc
            tail += 1
    return mask_arr.astype(bool)
