"""Backend selection for the hot loops.

The compiled extension is used when it has been built; otherwise the numpy
fallback is loaded.  Setting ``RMLMC_BACKEND=python`` forces the fallback.
"""

import os

from rmlmc import _kernels_py

if os.environ.get("RMLMC_BACKEND", "").lower() == "python":
    _impl = _kernels_py
    BACKEND = "python"
else:
    try:
        from rmlmc import _kernels as _impl
        BACKEND = "cython"
    except ImportError:  # extension not built
        _impl = _kernels_py
        BACKEND = "python"

scalar_advance = _impl.scalar_advance
heston_advance = _impl.heston_advance
sweep_counts = _impl.sweep_counts
sweep_counts_shared = _impl.sweep_counts_shared
sweep_levels = _impl.sweep_levels

__all__ = [
    "BACKEND",
    "scalar_advance",
    "heston_advance",
    "sweep_counts",
    "sweep_counts_shared",
    "sweep_levels",
]
