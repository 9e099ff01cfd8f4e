"""Selects the compiled clustering kernels when available.

Set ``HAZECAST_PURE_PYTHON=1`` to force the numpy fallback.
"""

import os

from . import _kernels_py

BACKEND = "python"
if os.environ.get("HAZECAST_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _kernels as _impl

        BACKEND = "compiled"
    except ImportError:  # extension not built
        _impl = _kernels_py
else:
    _impl = _kernels_py

distance_matrix = _impl.distance_matrix
agglomerate_merges = _impl.agglomerate_merges
window_mean = _impl.window_mean
