"""Kernel backend chosen at import time.

The compiled ``_core`` extension is preferred. Setting the environment
variable ``SQLEARN_PURE_PYTHON=1`` forces the numpy fallback, which is also
used silently when the extension was never built.
"""
from __future__ import annotations

import os

from . import _pycore

if os.environ.get("SQLEARN_PURE_PYTHON", "") not in ("", "0"):
    _impl = _pycore
    BACKEND = "python"
else:
    try:
        from . import _core as _impl  # type: ignore[attr-defined]

        BACKEND = "cython"
    except ImportError:
        _impl = _pycore
        BACKEND = "python"

kth_smallest = _impl.kth_smallest
tail_sums = _impl.tail_sums
capped_simplex_weights = _impl.capped_simplex_weights


def available_backends() -> dict:
    """Map backend name to kernel module, for tests and benchmarks."""
    out = {"python": _pycore}
    try:
        from . import _core  # type: ignore[attr-defined]

        out["cython"] = _core
    except ImportError:
        pass
    return out
