"""Select the kernel implementation at import time.

The compiled extension is preferred; set ``ACTIONANGLE_PURE_PYTHON=1`` to
force the NumPy fallback.
"""

from __future__ import annotations

import os

from . import _pykernels

kernels = _pykernels

if os.environ.get("ACTIONANGLE_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _ckernels as kernels  # type: ignore[no-redef]
    except ImportError:  # extension not built
        kernels = _pykernels

BACKEND = kernels.BACKEND


def threads() -> int:
    """Worker cap from ``ACTIONANGLE_THREADS`` (0 or unset means auto)."""
    raw = os.environ.get("ACTIONANGLE_THREADS", "0").strip() or "0"
    try:
        n = int(raw)
    except ValueError:
        n = 0
    if n <= 0:
        n = os.cpu_count() or 1
    return n
