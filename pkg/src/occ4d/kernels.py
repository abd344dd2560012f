"""Kernel backend selection.

The compiled backend is preferred when importable; set OCC4D_FORCE_NUMPY=1
to force the pure-numpy fallback (used by the benchmark and parity tests).
Both backends produce bitwise-identical results.
"""

from __future__ import annotations

import os

if os.environ.get("OCC4D_FORCE_NUMPY", "").strip() not in ("", "0"):
    from . import _kernels_numpy as _impl

    BACKEND = "numpy"
else:
    try:
        from . import _native as _impl  # type: ignore[attr-defined]

        BACKEND = "native"
    except ImportError:
        from . import _kernels_numpy as _impl

        BACKEND = "numpy"

pair_counts = _impl.pair_counts
value_counts = _impl.value_counts
assign_nearest_box = _impl.assign_nearest_box

__all__ = ["BACKEND", "pair_counts", "value_counts", "assign_nearest_box"]
