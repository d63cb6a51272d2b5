"""Time the compiled kernels against the NumPy/SciPy fallbacks.

    python benchmarks/bench_kernels.py [--size 128] [--repeat 50]

Also renders full three-view frames with whichever backend is active, since
that is the number that bounds dataset generation.
"""

import argparse
import timeit

import numpy as np

from atara_lab import _kernels_py
from atara_lab.kinematics import default_chain
from atara_lab.renderer import default_cameras, render_views


def _capsules(rng, n, size):
    caps = np.empty((n, 6))
    caps[:, :4] = rng.uniform(0, size, (n, 4))
    caps[:, 4:] = rng.uniform(1, size / 16, (n, 2))
    colors = rng.uniform(0, 60, (n, 3))
    return caps, colors


def _blobby(rng, size):
    img = np.full((size, size, 3), 200, np.uint8)
    for _ in range(12):
        r, c, s = *rng.integers(0, size, 2), int(rng.integers(4, size // 4))
        img[max(r - s, 0) : r + s, max(c - s, 0) : c + s] = 20
    return img


def _time(fn, repeat):
    return min(timeit.repeat(fn, number=1, repeat=repeat)) * 1e3


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--size", type=int, default=128)
    p.add_argument("--repeat", type=int, default=50)
    args = p.parse_args(argv)
    rng = np.random.default_rng(0)
    size = args.size
    caps, colors = _capsules(rng, 40, size)
    blobs = _blobby(rng, size)
    seed = tuple(int(v) for v in np.argwhere(blobs[..., 0] == 20)[0])

    impls = {"python": _kernels_py}
    try:
        from atara_lab import _kernels

        impls["cython"] = _kernels
    except ImportError:
        print("compiled extension not built; timing the fallback only")

    print(f"{'kernel':<16}{'backend':<10}{'best ms':>10}")
    for name, mod in impls.items():
        t = _time(lambda: mod.draw_capsules(np.zeros((size, size, 3), np.float32), caps, colors), args.repeat)
        print(f"{'draw_capsules':<16}{name:<10}{t:>10.3f}")
    for name, mod in impls.items():
        t = _time(lambda: mod.flood_fill(blobs, seed[0], seed[1], 8), args.repeat)
        print(f"{'flood_fill':<16}{name:<10}{t:>10.3f}")

    left, right = default_chain("left"), default_chain("right")
    cams = default_cameras(size)
    t = _time(lambda: render_views(left, left.home, right, right.home, (0.5, 0.5), cams), max(args.repeat // 5, 3))
    from atara_lab import BACKEND

    print(f"{'render_views':<16}{BACKEND:<10}{t:>10.3f}")


if __name__ == "__main__":
    main()
