"""Pure-numpy kernel backend.

The compiled backend in _native.pyx mirrors these functions exactly; both
must produce bitwise-identical outputs. Keep the floating-point expression
structure in assign_nearest_box in sync with the compiled loop.
"""

from __future__ import annotations

from typing import Optional

import numpy as np


def _masked(arr: np.ndarray, mask: Optional[np.ndarray]) -> np.ndarray:
    return arr if mask is None else arr[mask]


def pair_counts(
    a: np.ndarray, b: np.ndarray, mask: Optional[np.ndarray] = None
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Count occurrences of (a[i], b[i]) pairs where mask[i] is set.

    a and b are u32 arrays of equal length. Returns (keys_a, keys_b, counts)
    sorted by (a, b).
    """
    a = _masked(a, mask)
    b = _masked(b, mask)
    if a.size == 0:
        empty32 = np.empty(0, dtype=np.uint32)
        return empty32, empty32.copy(), np.empty(0, dtype=np.int64)
    comb = (a.astype(np.uint64) << np.uint64(32)) | b.astype(np.uint64)
    keys, counts = np.unique(comb, return_counts=True)
    ka = (keys >> np.uint64(32)).astype(np.uint32)
    kb = (keys & np.uint64(0xFFFFFFFF)).astype(np.uint32)
    return ka, kb, counts.astype(np.int64)


def value_counts(
    values: np.ndarray, mask: Optional[np.ndarray] = None
) -> tuple[np.ndarray, np.ndarray]:
    """Count occurrences of each u32 value where mask is set; sorted by value."""
    v = _masked(values, mask)
    if v.size == 0:
        return np.empty(0, dtype=np.uint32), np.empty(0, dtype=np.int64)
    vals, counts = np.unique(v, return_counts=True)
    return vals.astype(np.uint32), counts.astype(np.int64)


def assign_nearest_box(
    px: np.ndarray,
    py: np.ndarray,
    pz: np.ndarray,
    bx: np.ndarray,
    by: np.ndarray,
    bz: np.ndarray,
    hx: np.ndarray,
    hy: np.ndarray,
    hz: np.ndarray,
    cos_yaw: np.ndarray,
    sin_yaw: np.ndarray,
    track_ids: np.ndarray,
) -> np.ndarray:
    """Assign each point the track id of its best box.

    Preference per point: containing boxes beat non-containing ones; within
    either group the smallest center-to-point squared distance wins; exact
    distance ties go to the smallest track id. Containment is boundary
    inclusive in the box frame (point rotated by -yaw about the center).
    At least one box is required.
    """
    n = px.shape[0]
    best_inside = np.zeros(n, dtype=bool)
    best_d2 = np.full(n, np.inf, dtype=np.float64)
    best_tid = np.full(n, np.iinfo(np.uint32).max, dtype=np.uint32)
    for j in range(bx.shape[0]):
        dx = px - bx[j]
        dy = py - by[j]
        dz = pz - bz[j]
        lx = cos_yaw[j] * dx + sin_yaw[j] * dy
        ly = cos_yaw[j] * dy - sin_yaw[j] * dx
        inside = (
            (np.abs(lx) <= hx[j]) & (np.abs(ly) <= hy[j]) & (np.abs(dz) <= hz[j])
        )
        d2 = dx * dx + dy * dy + dz * dz
        tid = track_ids[j]
        closer = d2 < best_d2
        tie = (d2 == best_d2) & (tid < best_tid)
        better_same_group = (inside == best_inside) & (closer | tie)
        better = (inside & ~best_inside) | better_same_group
        best_inside = np.where(better, inside, best_inside)
        best_d2 = np.where(better, d2, best_d2)
        best_tid = np.where(better, tid, best_tid)
    return best_tid
