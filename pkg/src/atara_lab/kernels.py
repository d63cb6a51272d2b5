"""Hot-loop kernels, compiled when available.

The Cython extension ``atara_lab._kernels`` is used if it was built; otherwise
the NumPy/SciPy implementations in ``_kernels_py`` are used. Set
``ATARA_LAB_PURE_PYTHON=1`` to force the fallback.
"""

import os

from . import _kernels_py

if os.environ.get("ATARA_LAB_PURE_PYTHON", "") not in ("", "0"):
    _compiled = None
else:
    try:
        from . import _kernels as _compiled
    except ImportError:
        _compiled = None

BACKEND = "cython" if _compiled is not None else "python"
_impl = _compiled if _compiled is not None else _kernels_py

draw_capsules = _impl.draw_capsules
flood_fill = _impl.flood_fill
