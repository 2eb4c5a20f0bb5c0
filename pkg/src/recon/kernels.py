"""Backend selection for the geometry kernels.

The compiled extension is preferred; set ``RECON_PURE_PYTHON=1`` to force the
numpy fallback. ``BACKEND`` names the active one.
"""
import os

from . import _kernels_py

if os.environ.get("RECON_PURE_PYTHON", "") not in ("", "0"):
    _impl = _kernels_py
    BACKEND = "python"
else:
    try:
        from . import _kernels as _impl  # type: ignore[no-redef]
        BACKEND = "cython"
    except ImportError:
        _impl = _kernels_py
        BACKEND = "python"

raycast = _impl.raycast
sweep = _impl.sweep
grid_astar = _impl.grid_astar
cover_trace = _impl.cover_trace

__all__ = ["BACKEND", "raycast", "sweep", "grid_astar", "cover_trace"]
