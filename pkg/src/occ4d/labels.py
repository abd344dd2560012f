"""Panoptic ground-truth generation from semantic grids and box tracks.

Each thing voxel is assigned the track id of its best box of the same
semantic class: containing boxes win over non-containing ones, then the
nearest box center, then the smallest track id. Thing voxels of a class
with no boxes in the frame are demoted to the fallback stuff class when the
table defines one ("general object"), otherwise they keep their class with
instance id 0; both cases are logged.
"""

from __future__ import annotations

import logging
import math
from typing import Sequence

import numpy as np

from . import kernels
from .errors import FrameMismatch, MissingClassTableEntry
from .grid import (
    ClassTable,
    PanopticGrid,
    SemanticGrid,
    TrackedBox,
    apply_pose,
    grid_centers,
)

logger = logging.getLogger(__name__)


def point_in_box(box: TrackedBox, point: Sequence[float]) -> bool:
    """True iff the world point lies inside the box, boundary inclusive."""
    dx = float(point[0]) - box.center[0]
    dy = float(point[1]) - box.center[1]
    dz = float(point[2]) - box.center[2]
    c = math.cos(box.yaw)
    s = math.sin(box.yaw)
    lx = c * dx + s * dy
    ly = c * dy - s * dx
    return (
        abs(lx) <= box.size[0] / 2.0
        and abs(ly) <= box.size[1] / 2.0
        and abs(dz) <= box.size[2] / 2.0
    )


def _box_arrays(boxes: list[TrackedBox]):
    n = len(boxes)
    bx = np.empty(n)
    by = np.empty(n)
    bz = np.empty(n)
    hx = np.empty(n)
    hy = np.empty(n)
    hz = np.empty(n)
    cos_yaw = np.empty(n)
    sin_yaw = np.empty(n)
    tids = np.empty(n, dtype=np.uint32)
    for j, b in enumerate(boxes):
        bx[j], by[j], bz[j] = b.center
        hx[j] = b.size[0] / 2.0
        hy[j] = b.size[1] / 2.0
        hz[j] = b.size[2] / 2.0
        cos_yaw[j] = math.cos(b.yaw)
        sin_yaw[j] = math.sin(b.yaw)
        tids[j] = b.track_id
    return bx, by, bz, hx, hy, hz, cos_yaw, sin_yaw, tids


def generate_frame_labels(
    sem: SemanticGrid, boxes: Sequence[TrackedBox], table: ClassTable
) -> PanopticGrid:
    """Produce a panoptic grid for one frame.

    Boxes are world-frame; sem.ego_pose maps the grid into the world frame.
    All boxes must carry sem's frame index.
    """
    if sem.classes.size and int(sem.classes.max()) >= len(table):
        bad = int(np.argmax(sem.classes >= len(table)))
        raise MissingClassTableEntry(
            f"voxel {bad}: class id {int(sem.classes[bad])} not in table"
        )
    for b in boxes:
        if b.frame_index != sem.frame_index:
            raise FrameMismatch(
                f"box track {b.track_id} is for frame {b.frame_index}, "
                f"grid is frame {sem.frame_index}"
            )
        if b.class_id >= len(table):
            raise MissingClassTableEntry(
                f"box track {b.track_id}: class id {b.class_id} not in table"
            )
        if table.role_of(b.class_id) != "thing":
            raise MissingClassTableEntry(
                f"box track {b.track_id}: class {b.class_id} is not a thing class"
            )

    classes = sem.classes.copy()
    instances = np.zeros(sem.spec.nvox, dtype=np.uint32)
    thing_voxel = table.thing_mask()[classes]
    if thing_voxel.any():
        sel_all = np.flatnonzero(thing_voxel)
        world = apply_pose(sem.ego_pose, grid_centers(sem.spec)[sel_all])
        px = np.ascontiguousarray(world[:, 0])
        py = np.ascontiguousarray(world[:, 1])
        pz = np.ascontiguousarray(world[:, 2])
        voxel_class = classes[sel_all]
        by_class: dict[int, list[TrackedBox]] = {}
        for b in boxes:
            by_class.setdefault(b.class_id, []).append(b)
        fallback = table.fallback_stuff_id()
        for k in sorted(int(c) for c in np.unique(voxel_class)):
            in_class = voxel_class == k
            boxes_k = sorted(by_class.get(k, []), key=lambda b: b.track_id)
            if not boxes_k:
                count = int(in_class.sum())
                if fallback is not None:
                    classes[sel_all[in_class]] = fallback
                    logger.warning(
                        "frame %d: no %s boxes; %d voxels demoted to %s",
                        sem.frame_index,
                        table.name_of(k),
                        count,
                        table.name_of(fallback),
                    )
                else:
                    logger.warning(
                        "frame %d: no %s boxes and no fallback stuff class; "
                        "%d voxels keep class with no instance",
                        sem.frame_index,
                        table.name_of(k),
                        count,
                    )
                continue
            ids = kernels.assign_nearest_box(
                px[in_class],
                py[in_class],
                pz[in_class],
                *_box_arrays(boxes_k),
            )
            instances[sel_all[in_class]] = ids
    return PanopticGrid(
        spec=sem.spec,
        classes=classes,
        instances=instances,
        visibility=sem.visibility,
        frame_index=sem.frame_index,
        ego_pose=sem.ego_pose,
    )
