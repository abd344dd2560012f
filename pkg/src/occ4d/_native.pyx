# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled counting and nearest-box kernels.

Mirrors _kernels_numpy exactly; outputs are bitwise identical to the numpy
backend (same floating-point expression structure, contraction disabled in
setup.py).
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport INFINITY, fabs
from libc.stdint cimport int64_t, uint8_t, uint32_t, uint64_t
from libcpp.algorithm cimport sort
from libcpp.unordered_map cimport unordered_map
from libcpp.vector cimport vector

cnp.import_array()


cdef inline const uint8_t[::1] _mask_view(object mask):
    return memoryview(np.ascontiguousarray(mask).view(np.uint8))


def pair_counts(a, b, mask=None):
    """Count (a[i], b[i]) pairs where mask[i] is set; sorted by (a, b)."""
    cdef const uint32_t[::1] av = np.ascontiguousarray(a, dtype=np.uint32)
    cdef const uint32_t[::1] bv = np.ascontiguousarray(b, dtype=np.uint32)
    cdef Py_ssize_t n = av.shape[0]
    if bv.shape[0] != n:
        raise ValueError("a and b must have equal length")
    cdef const uint8_t[::1] mv = None
    if mask is not None:
        mv = _mask_view(mask)
        if mv.shape[0] != n:
            raise ValueError("mask length mismatch")

    cdef unordered_map[uint64_t, int64_t] counts
    cdef Py_ssize_t i
    cdef uint64_t key
    if mask is None:
        for i in range(n):
            key = (<uint64_t> av[i] << 32) | <uint64_t> bv[i]
            counts[key] += 1
    else:
        for i in range(n):
            if mv[i]:
                key = (<uint64_t> av[i] << 32) | <uint64_t> bv[i]
                counts[key] += 1

    cdef vector[uint64_t] keys
    keys.reserve(counts.size())
    for item in counts:
        keys.push_back(item.first)
    sort(keys.begin(), keys.end())

    cdef Py_ssize_t k = <Py_ssize_t> keys.size()
    ka = np.empty(k, dtype=np.uint32)
    kb = np.empty(k, dtype=np.uint32)
    cnt = np.empty(k, dtype=np.int64)
    cdef uint32_t[::1] kav = ka
    cdef uint32_t[::1] kbv = kb
    cdef int64_t[::1] cntv = cnt
    for i in range(k):
        key = keys[i]
        kav[i] = <uint32_t> (key >> 32)
        kbv[i] = <uint32_t> (key & 0xFFFFFFFFu)
        cntv[i] = counts[key]
    return ka, kb, cnt


def value_counts(values, mask=None):
    """Count occurrences of each u32 value where mask is set; sorted by value."""
    cdef const uint32_t[::1] vv = np.ascontiguousarray(values, dtype=np.uint32)
    cdef Py_ssize_t n = vv.shape[0]
    cdef const uint8_t[::1] mv = None
    if mask is not None:
        mv = _mask_view(mask)
        if mv.shape[0] != n:
            raise ValueError("mask length mismatch")

    cdef unordered_map[uint64_t, int64_t] counts
    cdef Py_ssize_t i
    if mask is None:
        for i in range(n):
            counts[<uint64_t> vv[i]] += 1
    else:
        for i in range(n):
            if mv[i]:
                counts[<uint64_t> vv[i]] += 1

    cdef vector[uint64_t] keys
    keys.reserve(counts.size())
    for item in counts:
        keys.push_back(item.first)
    sort(keys.begin(), keys.end())

    cdef Py_ssize_t k = <Py_ssize_t> keys.size()
    vals = np.empty(k, dtype=np.uint32)
    cnt = np.empty(k, dtype=np.int64)
    cdef uint32_t[::1] valsv = vals
    cdef int64_t[::1] cntv = cnt
    for i in range(k):
        valsv[i] = <uint32_t> keys[i]
        cntv[i] = counts[keys[i]]
    return vals, cnt


def assign_nearest_box(px, py, pz, bx, by, bz, hx, hy, hz, cos_yaw, sin_yaw, track_ids):
    """Assign each point the track id of its best box.

    Same preference order as the numpy backend: containment first, then
    smallest squared center distance, then smallest track id.
    """
    cdef const double[::1] pxv = np.ascontiguousarray(px, dtype=np.float64)
    cdef const double[::1] pyv = np.ascontiguousarray(py, dtype=np.float64)
    cdef const double[::1] pzv = np.ascontiguousarray(pz, dtype=np.float64)
    cdef const double[::1] bxv = np.ascontiguousarray(bx, dtype=np.float64)
    cdef const double[::1] byv = np.ascontiguousarray(by, dtype=np.float64)
    cdef const double[::1] bzv = np.ascontiguousarray(bz, dtype=np.float64)
    cdef const double[::1] hxv = np.ascontiguousarray(hx, dtype=np.float64)
    cdef const double[::1] hyv = np.ascontiguousarray(hy, dtype=np.float64)
    cdef const double[::1] hzv = np.ascontiguousarray(hz, dtype=np.float64)
    cdef const double[::1] cosv = np.ascontiguousarray(cos_yaw, dtype=np.float64)
    cdef const double[::1] sinv = np.ascontiguousarray(sin_yaw, dtype=np.float64)
    cdef const uint32_t[::1] tidv = np.ascontiguousarray(track_ids, dtype=np.uint32)

    cdef Py_ssize_t n = pxv.shape[0]
    cdef Py_ssize_t m = bxv.shape[0]
    out = np.empty(n, dtype=np.uint32)
    cdef uint32_t[::1] outv = out

    cdef Py_ssize_t i, j
    cdef double dx, dy, dz, lx, ly, d2, best_d2
    cdef bint inside, best_inside, better
    cdef uint32_t tid, best_tid
    for i in range(n):
        best_inside = False
        best_d2 = INFINITY
        best_tid = 0xFFFFFFFFu
        for j in range(m):
            dx = pxv[i] - bxv[j]
            dy = pyv[i] - byv[j]
            dz = pzv[i] - bzv[j]
            lx = cosv[j] * dx + sinv[j] * dy
            ly = cosv[j] * dy - sinv[j] * dx
            inside = (
                fabs(lx) <= hxv[j] and fabs(ly) <= hyv[j] and fabs(dz) <= hzv[j]
            )
            d2 = dx * dx + dy * dy + dz * dz
            tid = tidv[j]
            if inside == best_inside:
                better = d2 < best_d2 or (d2 == best_d2 and tid < best_tid)
            else:
                better = inside and not best_inside
            if better:
                best_inside = inside
                best_d2 = d2
                best_tid = tid
        outv[i] = best_tid
    return out
