"""Grid geometry, panoptic label containers, and coordinate transforms.

Conventions used everywhere in the package:

- Voxel arrays are dense and x-major: flat index = ix + nx * (iy + ny * iz),
  so x varies fastest. Grid dumps share this order.
- A grid's ``origin`` is the coordinate of the min corner of voxel (0,0,0) in
  the grid's own (ego) frame; ``ego_pose`` maps grid frame to world frame.
  With an identity pose the two frames coincide.
- Instance id 0 means "no instance". Free voxels always carry id 0.
- The upper boundary of the grid is exclusive: a point exactly on the max
  corner is outside.

All containers are immutable after construction (arrays are marked
read-only), so values can be shared freely across threads.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Literal, Optional, Sequence

import numpy as np

from .errors import SingularPose

Role = Literal["thing", "stuff", "free"]

_ROLES = ("thing", "stuff", "free")


def _as_triple(value, name: str, *, numeric=float) -> tuple:
    if np.isscalar(value):
        value = (value, value, value)
    t = tuple(numeric(v) for v in value)
    if len(t) != 3:
        raise ValueError(f"{name} must have 3 components, got {len(t)}")
    return t


@dataclass(frozen=True)
class GridSpec:
    """Geometry of a dense voxel grid."""

    dims: tuple[int, int, int]
    voxel_size: tuple[float, float, float]
    origin: tuple[float, float, float]

    def __post_init__(self):
        object.__setattr__(self, "dims", _as_triple(self.dims, "dims", numeric=int))
        object.__setattr__(
            self, "voxel_size", _as_triple(self.voxel_size, "voxel_size")
        )
        object.__setattr__(self, "origin", _as_triple(self.origin, "origin"))
        if any(d < 1 for d in self.dims):
            raise ValueError(f"dims must be >= 1, got {self.dims}")
        if any(not (s > 0) for s in self.voxel_size):
            raise ValueError(f"voxel_size must be > 0, got {self.voxel_size}")
        extent = [o + d * s for o, d, s in zip(self.origin, self.dims, self.voxel_size)]
        if not all(math.isfinite(v) for v in list(self.origin) + extent):
            raise ValueError("grid extent must be finite")

    @property
    def nvox(self) -> int:
        nx, ny, nz = self.dims
        return nx * ny * nz

    @property
    def max_corner(self) -> tuple[float, float, float]:
        return tuple(
            o + d * s for o, d, s in zip(self.origin, self.dims, self.voxel_size)
        )

    def voxel_center(self, index: Sequence[int]) -> np.ndarray:
        """Center of one voxel, in the grid frame."""
        return np.array(
            [
                self.origin[a] + (index[a] + 0.5) * self.voxel_size[a]
                for a in range(3)
            ],
            dtype=np.float64,
        )

    def flat_index(self, ix: int, iy: int, iz: int) -> int:
        nx, ny, _ = self.dims
        return ix + nx * (iy + ny * iz)


@lru_cache(maxsize=4)
def _grid_centers(spec: GridSpec) -> np.ndarray:
    """(nvox, 3) voxel centers in grid frame, x-major order. Read-only."""
    nx, ny, nz = spec.dims
    ox, oy, oz = spec.origin
    sx, sy, sz = spec.voxel_size
    xs = ox + (np.arange(nx, dtype=np.float64) + 0.5) * sx
    ys = oy + (np.arange(ny, dtype=np.float64) + 0.5) * sy
    zs = oz + (np.arange(nz, dtype=np.float64) + 0.5) * sz
    out = np.empty((nz, ny, nx, 3), dtype=np.float64)
    out[..., 0] = xs[None, None, :]
    out[..., 1] = ys[None, :, None]
    out[..., 2] = zs[:, None, None]
    out = out.reshape(-1, 3)
    out.flags.writeable = False
    return out


def grid_centers(spec: GridSpec) -> np.ndarray:
    return _grid_centers(spec)


@dataclass(frozen=True)
class ClassDef:
    class_id: int
    name: str
    role: Role

    def __post_init__(self):
        object.__setattr__(self, "class_id", int(self.class_id))
        if self.class_id < 0 or self.class_id > 0xFFFF:
            raise ValueError(f"class_id out of u16 range: {self.class_id}")
        if not self.name:
            raise ValueError("class name must be nonempty")
        if self.role not in _ROLES:
            raise ValueError(f"role must be one of {_ROLES}, got {self.role!r}")


def _normalized_name(name: str) -> str:
    return " ".join(name.strip().lower().replace("_", " ").replace("-", " ").split())


@dataclass(frozen=True)
class ClassTable:
    """Ordered class definitions: unique contiguous ids, exactly one free."""

    entries: tuple[ClassDef, ...]

    def __post_init__(self):
        entries = tuple(
            e if isinstance(e, ClassDef) else ClassDef(*e) for e in self.entries
        )
        object.__setattr__(self, "entries", entries)
        ids = [e.class_id for e in entries]
        if sorted(ids) != list(range(len(entries))):
            raise ValueError(f"class ids must be unique and contiguous from 0: {ids}")
        if ids != sorted(ids):
            raise ValueError("class entries must be listed in id order")
        roles = [e.role for e in entries]
        if roles.count("free") != 1:
            raise ValueError("exactly one class must have role 'free'")
        if roles.count("thing") < 1:
            raise ValueError("at least one thing class is required")
        names = [e.name for e in entries]
        if len(set(names)) != len(names):
            raise ValueError("class names must be unique")

    def __len__(self) -> int:
        return len(self.entries)

    @property
    def free_id(self) -> int:
        return next(e.class_id for e in self.entries if e.role == "free")

    @property
    def thing_ids(self) -> tuple[int, ...]:
        return tuple(e.class_id for e in self.entries if e.role == "thing")

    @property
    def stuff_ids(self) -> tuple[int, ...]:
        return tuple(e.class_id for e in self.entries if e.role == "stuff")

    def role_of(self, class_id: int) -> Role:
        return self.entries[class_id].role

    def name_of(self, class_id: int) -> str:
        return self.entries[class_id].name

    def by_name(self, name: str) -> ClassDef:
        for e in self.entries:
            if e.name == name:
                return e
        raise KeyError(name)

    def thing_mask(self) -> np.ndarray:
        """Boolean array of length len(self), true where role is thing."""
        m = np.array([e.role == "thing" for e in self.entries], dtype=bool)
        m.flags.writeable = False
        return m

    def fallback_stuff_id(self) -> Optional[int]:
        """Stuff class used to absorb orphaned thing voxels, if present."""
        for e in self.entries:
            if e.role == "stuff" and _normalized_name(e.name) == "general object":
                return e.class_id
        return None


IDENTITY_POSE = np.eye(4, dtype=np.float64)
IDENTITY_POSE.flags.writeable = False


def validate_pose(pose: np.ndarray) -> np.ndarray:
    """Check a 4x4 rigid transform; returns it as read-only float64."""
    pose = np.asarray(pose, dtype=np.float64)
    if pose.shape != (4, 4):
        raise SingularPose(f"pose must be 4x4, got {pose.shape}")
    if not np.isfinite(pose).all():
        raise SingularPose("pose contains non-finite entries")
    if not (pose[3] == np.array([0.0, 0.0, 0.0, 1.0])).all():
        raise SingularPose(f"pose last row must be (0,0,0,1), got {pose[3]}")
    r = pose[:3, :3]
    err = np.abs(r.T @ r - np.eye(3)).max()
    if err >= 1e-6:
        raise SingularPose(f"rotation block not orthonormal (|R^T R - I| = {err:.3g})")
    out = pose.copy()
    out.flags.writeable = False
    return out


def invert_pose(pose: np.ndarray) -> np.ndarray:
    """Inverse of a rigid transform, computed as (R^T, -R^T t)."""
    r = pose[:3, :3]
    t = pose[:3, 3]
    inv = np.eye(4, dtype=np.float64)
    inv[:3, :3] = r.T
    inv[:3, 3] = -r.T @ t
    return inv


def apply_pose(pose: np.ndarray, points: np.ndarray) -> np.ndarray:
    """Apply a 4x4 transform to an (N, 3) or (3,) point array."""
    pts = np.asarray(points, dtype=np.float64)
    return pts @ pose[:3, :3].T + pose[:3, 3]


def _coerce_ids(arr, nvox: int, dtype, name: str) -> np.ndarray:
    a = np.asarray(arr)
    if a.ndim != 1 or a.shape[0] != nvox:
        raise ValueError(f"{name} must be 1-D of length {nvox}, got shape {a.shape}")
    if a.dtype != dtype:
        if not np.issubdtype(a.dtype, np.integer):
            raise ValueError(f"{name} must be an integer array, got {a.dtype}")
        info = np.iinfo(dtype)
        if a.size and (a.min() < info.min or a.max() > info.max):
            raise ValueError(f"{name} values out of {np.dtype(dtype).name} range")
        a = a.astype(dtype)
    a = np.ascontiguousarray(a)
    a.flags.writeable = False
    return a


def _coerce_visibility(vis, nvox: int) -> Optional[np.ndarray]:
    if vis is None:
        return None
    v = np.asarray(vis)
    if v.ndim != 1 or v.shape[0] != nvox:
        raise ValueError(f"visibility must be 1-D of length {nvox}, got {v.shape}")
    v = np.ascontiguousarray(v.astype(bool))
    v.flags.writeable = False
    return v


@dataclass(frozen=True)
class SemanticGrid:
    """Per-voxel class labels without instance ids."""

    spec: GridSpec
    classes: np.ndarray
    visibility: Optional[np.ndarray] = None
    frame_index: int = 0
    ego_pose: np.ndarray = field(default_factory=lambda: IDENTITY_POSE)

    def __post_init__(self):
        n = self.spec.nvox
        object.__setattr__(
            self, "classes", _coerce_ids(self.classes, n, np.uint16, "classes")
        )
        object.__setattr__(
            self, "visibility", _coerce_visibility(self.visibility, n)
        )
        if self.frame_index < 0:
            raise ValueError(f"frame_index must be >= 0, got {self.frame_index}")
        object.__setattr__(self, "ego_pose", validate_pose(self.ego_pose))


@dataclass(frozen=True)
class PanopticGrid:
    """Per-voxel (class, instance) labels for one frame."""

    spec: GridSpec
    classes: np.ndarray
    instances: np.ndarray
    visibility: Optional[np.ndarray] = None
    frame_index: int = 0
    ego_pose: np.ndarray = field(default_factory=lambda: IDENTITY_POSE)

    def __post_init__(self):
        n = self.spec.nvox
        object.__setattr__(
            self, "classes", _coerce_ids(self.classes, n, np.uint16, "classes")
        )
        object.__setattr__(
            self, "instances", _coerce_ids(self.instances, n, np.uint32, "instances")
        )
        object.__setattr__(
            self, "visibility", _coerce_visibility(self.visibility, n)
        )
        if self.frame_index < 0:
            raise ValueError(f"frame_index must be >= 0, got {self.frame_index}")
        object.__setattr__(self, "ego_pose", validate_pose(self.ego_pose))

    def validate_labels(self, table: ClassTable) -> None:
        """Check class/instance coherence against a class table.

        Raises InvariantViolation naming the first offending voxel, or
        MissingClassTableEntry for unknown class ids.
        """
        from .errors import InvariantViolation, MissingClassTableEntry

        if self.classes.size and int(self.classes.max()) >= len(table):
            bad = int(np.argmax(self.classes >= len(table)))
            raise MissingClassTableEntry(
                f"voxel {bad}: class id {int(self.classes[bad])} not in table"
            )
        thing = table.thing_mask()
        nonthing_with_id = (self.instances != 0) & ~thing[self.classes]
        if nonthing_with_id.any():
            v = int(np.argmax(nonthing_with_id))
            role = table.role_of(int(self.classes[v]))
            raise InvariantViolation(
                v,
                f"instance id {int(self.instances[v])} on {role} class "
                f"{int(self.classes[v])}",
            )

    def semantic(self) -> SemanticGrid:
        return SemanticGrid(
            spec=self.spec,
            classes=self.classes,
            visibility=self.visibility,
            frame_index=self.frame_index,
            ego_pose=self.ego_pose,
        )


@dataclass(frozen=True)
class TrackedBox:
    """One oriented 3D box annotation in the world frame."""

    center: tuple[float, float, float]
    size: tuple[float, float, float]
    yaw: float
    class_id: int
    track_id: int
    frame_index: int

    def __post_init__(self):
        object.__setattr__(self, "center", _as_triple(self.center, "center"))
        object.__setattr__(self, "size", _as_triple(self.size, "size"))
        object.__setattr__(self, "yaw", float(self.yaw))
        object.__setattr__(self, "class_id", int(self.class_id))
        object.__setattr__(self, "track_id", int(self.track_id))
        object.__setattr__(self, "frame_index", int(self.frame_index))
        if not all(math.isfinite(c) for c in self.center):
            raise ValueError("center must be finite")
        if any(not (s > 0) for s in self.size):
            raise ValueError(f"size must be positive, got {self.size}")
        if not math.isfinite(self.yaw):
            raise ValueError("yaw must be finite")
        if self.track_id < 1:
            raise ValueError(f"track_id must be >= 1, got {self.track_id}")
        if self.class_id < 0:
            raise ValueError(f"class_id must be >= 0, got {self.class_id}")


def world_to_voxel(
    spec: GridSpec, point: Sequence[float]
) -> Optional[tuple[int, int, int]]:
    """Voxel index containing a grid-frame point, or None if outside.

    The upper boundary is exclusive: a point at exactly origin + dims *
    voxel_size is outside.
    """
    idx = []
    for a in range(3):
        i = math.floor((float(point[a]) - spec.origin[a]) / spec.voxel_size[a])
        if i < 0 or i >= spec.dims[a]:
            return None
        idx.append(int(i))
    return tuple(idx)


def voxel_indices(spec: GridSpec, points: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized world_to_voxel over grid-frame points.

    Returns (indices (N,3) int64, inside (N,) bool); indices of outside
    points are clipped into range so they can be used for masked gathers.
    """
    pts = np.asarray(points, dtype=np.float64)
    rel = (pts - np.array(spec.origin)) / np.array(spec.voxel_size)
    idx = np.floor(rel).astype(np.int64)
    dims = np.array(spec.dims, dtype=np.int64)
    inside = ((idx >= 0) & (idx < dims)).all(axis=1)
    return np.clip(idx, 0, dims - 1), inside


def instance_centroid(grid: PanopticGrid, instance_id: int) -> Optional[np.ndarray]:
    """Mean world-frame voxel center over one instance, or None if absent."""
    if instance_id < 1:
        raise ValueError(f"instance_id must be >= 1, got {instance_id}")
    sel = np.flatnonzero(grid.instances == instance_id)
    if sel.size == 0:
        return None
    centers = grid_centers(grid.spec)[sel]
    world = apply_pose(grid.ego_pose, centers)
    return world.mean(axis=0)


def warp_instances(
    src: PanopticGrid,
    dst_pose: np.ndarray,
    dst_spec: GridSpec,
    *,
    free_class_id: int,
) -> PanopticGrid:
    """Resample a panoptic grid into another ego frame.

    Each destination voxel center is transformed into the source frame via
    src.ego_pose^-1 . dst_pose and looked up by nearest voxel. Destination
    voxels falling outside the source grid get (free_class_id, 0). Labels are
    categorical so no blending is performed. Visibility is not propagated.
    """
    dst_pose = validate_pose(dst_pose)
    rel = invert_pose(src.ego_pose) @ dst_pose
    pts = apply_pose(rel, grid_centers(dst_spec))
    idx, inside = voxel_indices(src.spec, pts)
    nx, ny, _ = src.spec.dims
    flat = idx[:, 0] + nx * (idx[:, 1] + ny * idx[:, 2])
    classes = src.classes[flat]
    instances = src.instances[flat]
    classes = np.where(inside, classes, np.uint16(free_class_id)).astype(np.uint16)
    instances = np.where(inside, instances, np.uint32(0)).astype(np.uint32)
    return PanopticGrid(
        spec=dst_spec,
        classes=classes,
        instances=instances,
        visibility=None,
        frame_index=src.frame_index,
        ego_pose=dst_pose,
    )
