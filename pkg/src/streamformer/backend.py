"""Kernel backend selection.

The hot inner loops (prefix-sum attention, windowed attention, depthwise
convolution) have two interchangeable implementations: numba ``@njit``
kernels and pure-numpy fallbacks. Selection happens once at import time
from the ``STREAMFORMER_NUMBA`` environment variable:

    STREAMFORMER_NUMBA=1      force numba (ImportError if unavailable)
    STREAMFORMER_NUMBA=0      force the pure-numpy fallbacks
    unset / anything else     use numba when importable, else numpy

``benchmarks/compare_backends.py`` times the two side by side.
"""

from __future__ import annotations

import os

_flag = os.environ.get("STREAMFORMER_NUMBA", "auto").strip().lower()

if _flag in ("0", "off", "false", "no"):
    HAS_NUMBA = False
    NUMBA_ENABLED = False
elif _flag in ("1", "on", "true", "yes"):
    from numba import njit  # noqa: F401  (re-exported for kernels.py)

    HAS_NUMBA = True
    NUMBA_ENABLED = True
else:
    try:
        from numba import njit  # noqa: F401

        HAS_NUMBA = True
        NUMBA_ENABLED = True
    except ImportError:
        HAS_NUMBA = False
        NUMBA_ENABLED = False


def backend_name() -> str:
    """Name of the active kernel backend ("numba" or "numpy")."""
    return "numba" if NUMBA_ENABLED else "numpy"
