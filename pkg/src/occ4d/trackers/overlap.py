"""Single-frame-history overlap association.

The previous frame's relabeled grid is warped into the current frame's ego
pose; instances are matched by voxel IoU and matched current instances
inherit the previous track ids. Classes and visibility are never touched,
only instance ids change.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .. import kernels
from ..assignment import max_weight_matching
from ..errors import FrameMismatch, SpecMismatch
from ..grid import ClassTable, PanopticGrid, warp_instances


@dataclass
class FrameTransition:
    """Bookkeeping for one step: which ids appeared and disappeared."""

    frame_index: int
    births: int
    deaths: int
    carried: int


def _present_ids(grid: PanopticGrid, thing_lookup: np.ndarray) -> np.ndarray:
    tube = thing_lookup[grid.classes] & (grid.instances != 0)
    ids, _ = kernels.value_counts(grid.instances, tube)
    return ids


class OverlapTracker:
    """Stateful per-sequence associator; feed frames in order via step()."""

    def __init__(self, table: ClassTable, min_iou: float = 0.1):
        self.table = table
        self.min_iou = float(min_iou)
        self.next_id = 1
        self.prev: Optional[PanopticGrid] = None
        self.transitions: list[FrameTransition] = []
        self._thing = table.thing_mask()

    def _fresh(self) -> int:
        out = self.next_id
        self.next_id += 1
        return out

    def _relabel(self, grid: PanopticGrid, mapping: dict[int, int]) -> PanopticGrid:
        if not mapping:
            return grid
        local = np.fromiter(sorted(mapping), dtype=np.uint32, count=len(mapping))
        target = np.fromiter(
            (mapping[int(v)] for v in local), dtype=np.uint32, count=len(mapping)
        )
        pos = np.searchsorted(local, grid.instances)
        pos[pos >= local.size] = 0
        hit = local[pos] == grid.instances
        new_inst = np.where(hit, target[pos], np.uint32(0)).astype(np.uint32)
        return PanopticGrid(
            spec=grid.spec,
            classes=grid.classes,
            instances=new_inst,
            visibility=grid.visibility,
            frame_index=grid.frame_index,
            ego_pose=grid.ego_pose,
        )

    def step(self, grid: PanopticGrid) -> PanopticGrid:
        local_ids = _present_ids(grid, self._thing)
        if self.prev is None:
            mapping = {int(v): self._fresh() for v in local_ids}
            out = self._relabel(grid, mapping)
            self.prev = out
            self.transitions.append(
                FrameTransition(grid.frame_index, len(mapping), 0, 0)
            )
            return out

        if grid.spec != self.prev.spec:
            raise SpecMismatch("grid spec changed mid-sequence")
        warped = warp_instances(
            self.prev,
            grid.ego_pose,
            grid.spec,
            free_class_id=self.table.free_id,
        )
        prev_tube = self._thing[warped.classes] & (warped.instances != 0)
        curr_tube = self._thing[grid.classes] & (grid.instances != 0)
        prev_ids, prev_sizes = kernels.value_counts(warped.instances, prev_tube)
        curr_sizes_ids, curr_sizes = kernels.value_counts(grid.instances, curr_tube)
        # curr ids present in the grid, whether or not they overlap anything
        curr_ids = local_ids
        pi, ci, inter = kernels.pair_counts(
            warped.instances, grid.instances, prev_tube & curr_tube
        )

        prev_pos = {int(v): i for i, v in enumerate(prev_ids)}
        curr_pos = {int(v): i for i, v in enumerate(curr_ids)}
        size_of_curr = {
            int(v): int(n) for v, n in zip(curr_sizes_ids, curr_sizes)
        }
        iou = np.zeros((prev_ids.size, curr_ids.size), dtype=np.float64)
        for p, c, n in zip(pi.tolist(), ci.tolist(), inter.tolist()):
            union = int(prev_sizes[prev_pos[p]]) + size_of_curr[c] - int(n)
            iou[prev_pos[p], curr_pos[c]] = n / union

        pairs = max_weight_matching(iou, self.min_iou)
        mapping: dict[int, int] = {}
        for r, c in pairs:
            mapping[int(curr_ids[c])] = int(prev_ids[r])
        for v in curr_ids.tolist():
            if v not in mapping:
                mapping[v] = self._fresh()

        prev_alive = set(_present_ids(self.prev, self._thing).tolist())
        carried = {int(prev_ids[r]) for r, _ in pairs}
        births = sum(1 for v in curr_ids.tolist() if mapping[v] not in carried)
        deaths = len(prev_alive - carried)
        out = self._relabel(grid, mapping)
        self.prev = out
        self.transitions.append(
            FrameTransition(grid.frame_index, births, deaths, len(carried))
        )
        return out


def overlap_associate(
    tracker: OverlapTracker, prev: PanopticGrid, curr: PanopticGrid
) -> tuple[PanopticGrid, OverlapTracker]:
    """Associate one frame pair; bootstraps the tracker from prev if fresh."""
    if tracker.prev is None:
        tracker.step(prev)
    elif tracker.prev.frame_index != prev.frame_index:
        raise FrameMismatch(
            f"tracker is at frame {tracker.prev.frame_index}, got prev "
            f"{prev.frame_index}"
        )
    return tracker.step(curr), tracker
