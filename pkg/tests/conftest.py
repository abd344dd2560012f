import numpy as np
import pytest

from occ4d.grid import ClassDef, ClassTable, GridSpec, PanopticGrid


@pytest.fixture
def table4():
    return ClassTable(
        (
            ClassDef(0, "free", "free"),
            ClassDef(1, "ground", "stuff"),
            ClassDef(2, "vehicle", "thing"),
            ClassDef(3, "general object", "stuff"),
        )
    )


@pytest.fixture
def table6():
    return ClassTable(
        (
            ClassDef(0, "free", "free"),
            ClassDef(1, "ground", "stuff"),
            ClassDef(2, "building", "stuff"),
            ClassDef(3, "vehicle", "thing"),
            ClassDef(4, "pedestrian", "thing"),
            ClassDef(5, "general object", "stuff"),
        )
    )


@pytest.fixture
def small_spec():
    return GridSpec((8, 8, 4), (0.5, 0.5, 0.5), (-2.0, -2.0, -1.0))


def random_panoptic(
    rng: np.random.Generator,
    spec: GridSpec,
    table: ClassTable,
    *,
    frame_index: int = 0,
    max_tracks: int = 4,
    with_visibility: bool = False,
    track_class: dict[int, int] | None = None,
) -> PanopticGrid:
    """Random valid grid; instance ids are class-consistent across calls
    when the same track_class mapping is shared."""
    n = spec.nvox
    classes = rng.integers(0, len(table), size=n).astype(np.uint16)
    instances = np.zeros(n, dtype=np.uint32)
    thing = table.thing_mask()
    if track_class is None:
        track_class = {}
        for tid in range(1, max_tracks + 1):
            track_class[tid] = int(rng.choice(table.thing_ids))
    sel = np.flatnonzero(thing[classes])
    if sel.size and track_class:
        ids = rng.integers(1, max_tracks + 1, size=sel.size)
        instances[sel] = ids
        # force the class of each thing voxel to its track's class
        for tid, cid in track_class.items():
            classes[sel[ids == tid]] = cid
    vis = None
    if with_visibility:
        vis = rng.random(n) < 0.8
    return PanopticGrid(
        spec=spec,
        classes=classes,
        instances=instances,
        visibility=vis,
        frame_index=frame_index,
    )


def to_naive_frame(grid: PanopticGrid):
    """(classes, instances, visibility) as plain python sequences."""
    vis = None if grid.visibility is None else grid.visibility.tolist()
    return grid.classes.tolist(), grid.instances.tolist(), vis
