"""Constant-velocity box tracker over detections extracted from grids.

State per track is (cx, cy, cz, l, w, h, vx, vy, vz). Sizes are part of
the state but carry no dynamics; only the position block is advanced by
the velocity estimate. Association is greedy-free: one global assignment
on axis-aligned 3D IoU, gated by class.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .. import kernels
from ..assignment import max_weight_matching
from ..grid import ClassTable, PanopticGrid, apply_pose, grid_centers

_STATE = 9
_MEAS = 6


@dataclass(frozen=True)
class DetectedBox:
    """Axis-aligned detection in world coordinates."""

    local_id: int
    center: tuple[float, float, float]
    size: tuple[float, float, float]
    count: int
    class_id: int


@dataclass(frozen=True)
class KalmanConfig:
    dt: float = 0.5
    process_pos_std: float = 0.5
    process_size_std: float = 0.5
    process_vel_std: float = 1.0
    meas_std: float = 0.5
    init_vel_std: float = 10.0
    min_iou: float = 0.01
    min_hits: int = 2
    max_age: int = 3

    def transition(self) -> np.ndarray:
        f = np.eye(_STATE)
        for i in range(3):
            f[i, 6 + i] = self.dt
        return f

    def process_noise(self) -> np.ndarray:
        q = np.zeros(_STATE)
        q[0:3] = self.process_pos_std**2
        q[3:6] = self.process_size_std**2
        q[6:9] = self.process_vel_std**2
        return np.diag(q)

    def meas_noise(self) -> np.ndarray:
        return np.eye(_MEAS) * self.meas_std**2

    def initial_cov(self) -> np.ndarray:
        p = np.zeros(_STATE)
        p[0:6] = self.meas_std**2
        p[6:9] = self.init_vel_std**2
        return np.diag(p)


_H = np.zeros((_MEAS, _STATE))
_H[:_MEAS, :_MEAS] = np.eye(_MEAS)


@dataclass
class KalmanTrack:
    track_id: int
    class_id: int
    x: np.ndarray
    P: np.ndarray
    hits: int = 1
    misses: int = 0

    def box(self) -> tuple[np.ndarray, np.ndarray]:
        return self.x[0:3].copy(), self.x[3:6].copy()


def _aabb_iou(
    c1: np.ndarray, s1: np.ndarray, c2: np.ndarray, s2: np.ndarray
) -> float:
    lo = np.maximum(c1 - s1 / 2, c2 - s2 / 2)
    hi = np.minimum(c1 + s1 / 2, c2 + s2 / 2)
    edge = np.maximum(hi - lo, 0.0)
    inter = float(edge[0] * edge[1] * edge[2])
    if inter == 0.0:
        return 0.0
    v1 = float(s1[0] * s1[1] * s1[2])
    v2 = float(s2[0] * s2[1] * s2[2])
    return inter / (v1 + v2 - inter)


def instances_to_boxes(grid: PanopticGrid, table: ClassTable) -> list[DetectedBox]:
    """Axis-aligned boxes around each thing instance, in world coordinates.

    Extents are voxel-center min/max per axis inflated by half a voxel on
    each side, so an instance occupying one voxel yields a box of one
    voxel size.
    """
    thing = table.thing_mask()
    tube = thing[grid.classes] & (grid.instances != 0)
    if not tube.any():
        return []
    centers = grid_centers(grid.spec)
    world = apply_pose(grid.ego_pose, centers[tube])
    inst = grid.instances[tube]
    cls = grid.classes[tube]
    ids, counts = kernels.value_counts(inst, np.ones(inst.shape, dtype=bool))
    order = np.argsort(inst, kind="stable")
    inst_sorted = inst[order]
    world_sorted = world[order]
    cls_sorted = cls[order]
    bounds = np.searchsorted(inst_sorted, ids)
    out: list[DetectedBox] = []
    vs = np.asarray(grid.spec.voxel_size, dtype=np.float64)
    for k, vid in enumerate(ids.tolist()):
        a = int(bounds[k])
        b = a + int(counts[k])
        pts = world_sorted[a:b]
        lo = pts.min(axis=0) - vs / 2
        hi = pts.max(axis=0) + vs / 2
        votes = np.bincount(cls_sorted[a:b].astype(np.int64))
        class_id = int(np.flatnonzero(votes == votes.max())[0])
        out.append(
            DetectedBox(
                local_id=int(vid),
                center=tuple(((lo + hi) / 2).tolist()),
                size=tuple((hi - lo).tolist()),
                count=b - a,
                class_id=class_id,
            )
        )
    return out


class BoxTracker:
    """AB3DMOT-style tracker; step() returns the track id per detection."""

    def __init__(self, config: Optional[KalmanConfig] = None):
        self.config = config or KalmanConfig()
        self.tracks: list[KalmanTrack] = []
        self.next_id = 1
        self._F = self.config.transition()
        self._Q = self.config.process_noise()
        self._R = self.config.meas_noise()

    def _predict(self) -> None:
        for t in self.tracks:
            t.x = self._F @ t.x
            t.P = self._F @ t.P @ self._F.T + self._Q

    def _update(self, t: KalmanTrack, z: np.ndarray) -> None:
        y = z - _H @ t.x
        S = _H @ t.P @ _H.T + self._R
        K = t.P @ _H.T @ np.linalg.solve(S, np.eye(_MEAS))
        t.x = t.x + K @ y
        ikh = np.eye(_STATE) - K @ _H
        # Joseph form keeps P positive semidefinite under roundoff
        t.P = ikh @ t.P @ ikh.T + K @ self._R @ K.T
        t.P = (t.P + t.P.T) / 2

    def step(self, detections: Sequence[DetectedBox]) -> list[int]:
        cfg = self.config
        self._predict()
        iou = np.zeros((len(self.tracks), len(detections)))
        for i, t in enumerate(self.tracks):
            tc, ts = t.box()
            for j, d in enumerate(detections):
                if d.class_id != t.class_id:
                    continue
                iou[i, j] = _aabb_iou(
                    tc, ts, np.asarray(d.center), np.asarray(d.size)
                )
        pairs = max_weight_matching(iou, cfg.min_iou)
        matched_t = {r for r, _ in pairs}
        matched_d = {c for _, c in pairs}
        n_old = len(self.tracks)
        assigned: dict[int, int] = {}
        for r, c in pairs:
            t = self.tracks[r]
            d = detections[c]
            z = np.concatenate([np.asarray(d.center), np.asarray(d.size)])
            self._update(t, z)
            t.hits += 1
            t.misses = 0
            assigned[c] = t.track_id
        for j, d in enumerate(detections):
            if j in matched_d:
                continue
            x = np.zeros(_STATE)
            x[0:3] = d.center
            x[3:6] = d.size
            t = KalmanTrack(
                track_id=self.next_id,
                class_id=d.class_id,
                x=x,
                P=cfg.initial_cov(),
            )
            self.next_id += 1
            self.tracks.append(t)
            assigned[j] = t.track_id
        for i in range(n_old):
            if i not in matched_t:
                self.tracks[i].misses += 1
        self.tracks = [t for t in self.tracks if t.misses < cfg.max_age]
        return [assigned[j] for j in range(len(detections))]

    def confirmed_ids(self) -> list[int]:
        return [t.track_id for t in self.tracks if t.hits >= self.config.min_hits]


def kalman_track_step(
    state: BoxTracker, detections: Sequence[DetectedBox]
) -> tuple[list[int], BoxTracker]:
    """Functional wrapper over BoxTracker.step for driver code."""
    return state.step(detections), state
