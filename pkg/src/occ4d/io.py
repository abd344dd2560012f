"""File formats: binary grids, manifests, box tracks, proposal streams.

Grid file layout (normative, little-endian, see docs/formats.md):

    magic   8 bytes  "OCC4DPG1"
    header 40 bytes  nx, ny, nz (u32) | voxel_size x3 (f32) | origin x3 (f32)
                     | flags (u32)
    payload          classes  u16[nvox]
                     instances u32[nvox]          (absent if flags bit 1)
                     visibility bitset, LSB-first (present if flags bit 0),
                         ceil(nvox / 8) bytes

flags bit 0: visibility bitset present. flags bit 1: semantic-only file
(instances omitted). Voxel order is x-major. Payload length must match the
header exactly; trailing bytes are an error. Header floats are f32, so spec
values written to disk are read back at f32 precision.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np
import yaml

from .errors import (
    BadMagic,
    ManifestError,
    TrailingBytes,
    TruncatedPayload,
)
from .grid import (
    ClassDef,
    ClassTable,
    GridSpec,
    PanopticGrid,
    SemanticGrid,
    TrackedBox,
    validate_pose,
)

MAGIC = b"OCC4DPG1"
_HEADER = struct.Struct("<3I3f3f I")
FLAG_VISIBILITY = 1 << 0
FLAG_SEMANTIC_ONLY = 1 << 1

PathLike = Union[str, Path]


def _encode_header(spec: GridSpec, flags: int) -> bytes:
    nx, ny, nz = spec.dims
    return _HEADER.pack(
        nx, ny, nz, *[np.float32(v) for v in spec.voxel_size],
        *[np.float32(v) for v in spec.origin], flags
    )


def _pack_visibility(vis: np.ndarray) -> bytes:
    return np.packbits(vis.astype(np.uint8), bitorder="little").tobytes()


def _unpack_visibility(buf: bytes, nvox: int) -> np.ndarray:
    bits = np.unpackbits(np.frombuffer(buf, dtype=np.uint8), bitorder="little")
    return bits[:nvox].astype(bool)


def write_grid(grid: PanopticGrid, path: PathLike) -> None:
    """Write a panoptic grid; equal values produce equal bytes."""
    flags = FLAG_VISIBILITY if grid.visibility is not None else 0
    parts = [
        MAGIC,
        _encode_header(grid.spec, flags),
        np.ascontiguousarray(grid.classes).tobytes(),
        np.ascontiguousarray(grid.instances).tobytes(),
    ]
    if grid.visibility is not None:
        parts.append(_pack_visibility(grid.visibility))
    Path(path).write_bytes(b"".join(parts))


def write_semantic_grid(sem: SemanticGrid, path: PathLike) -> None:
    """Write a semantic-only grid (instances omitted, flag bit 1 set)."""
    flags = FLAG_SEMANTIC_ONLY
    if sem.visibility is not None:
        flags |= FLAG_VISIBILITY
    parts = [
        MAGIC,
        _encode_header(sem.spec, flags),
        np.ascontiguousarray(sem.classes).tobytes(),
    ]
    if sem.visibility is not None:
        parts.append(_pack_visibility(sem.visibility))
    Path(path).write_bytes(b"".join(parts))


def _decode(path: PathLike):
    raw = Path(path).read_bytes()
    if len(raw) < len(MAGIC) or raw[: len(MAGIC)] != MAGIC:
        raise BadMagic(f"{path}: expected magic {MAGIC!r}")
    off = len(MAGIC)
    if len(raw) < off + _HEADER.size:
        raise TruncatedPayload(f"{path}: header truncated")
    nx, ny, nz, sx, sy, sz, ox, oy, oz, flags = _HEADER.unpack_from(raw, off)
    off += _HEADER.size
    spec = GridSpec(
        dims=(nx, ny, nz),
        voxel_size=(float(sx), float(sy), float(sz)),
        origin=(float(ox), float(oy), float(oz)),
    )
    nvox = spec.nvox

    def take(nbytes: int, what: str) -> bytes:
        nonlocal off
        if len(raw) < off + nbytes:
            raise TruncatedPayload(f"{path}: {what} truncated")
        chunk = raw[off : off + nbytes]
        off += nbytes
        return chunk

    classes = np.frombuffer(take(2 * nvox, "classes"), dtype="<u2")
    instances = None
    if not flags & FLAG_SEMANTIC_ONLY:
        instances = np.frombuffer(take(4 * nvox, "instances"), dtype="<u4")
    visibility = None
    if flags & FLAG_VISIBILITY:
        visibility = _unpack_visibility(take((nvox + 7) // 8, "visibility"), nvox)
    if off != len(raw):
        raise TrailingBytes(f"{path}: {len(raw) - off} trailing bytes")
    return spec, classes, instances, visibility


def read_grid(
    path: PathLike,
    *,
    class_table: Optional[ClassTable] = None,
    frame_index: int = 0,
    ego_pose: Optional[np.ndarray] = None,
) -> PanopticGrid:
    """Read a panoptic grid file.

    Frame index and pose are not stored in grid files (the manifest carries
    them) and are attached from the keyword arguments. When a class table is
    given, the label coherence invariants are validated on load.
    """
    spec, classes, instances, visibility = _decode(path)
    if instances is None:
        raise TruncatedPayload(
            f"{path}: semantic-only file, use read_semantic_grid"
        )
    grid = PanopticGrid(
        spec=spec,
        classes=classes,
        instances=instances,
        visibility=visibility,
        frame_index=frame_index,
        ego_pose=ego_pose if ego_pose is not None else np.eye(4),
    )
    if class_table is not None:
        grid.validate_labels(class_table)
    return grid


def read_semantic_grid(
    path: PathLike,
    *,
    class_table: Optional[ClassTable] = None,
    frame_index: int = 0,
    ego_pose: Optional[np.ndarray] = None,
) -> SemanticGrid:
    """Read a semantic-only grid file (flag bit 1 required)."""
    spec, classes, instances, visibility = _decode(path)
    if instances is not None:
        raise TrailingBytes(f"{path}: panoptic file, use read_grid")
    sem = SemanticGrid(
        spec=spec,
        classes=classes,
        visibility=visibility,
        frame_index=frame_index,
        ego_pose=ego_pose if ego_pose is not None else np.eye(4),
    )
    if class_table is not None and sem.classes.size:
        if int(sem.classes.max()) >= len(class_table):
            from .errors import MissingClassTableEntry

            bad = int(np.argmax(sem.classes >= len(class_table)))
            raise MissingClassTableEntry(
                f"{path}: voxel {bad}: class id {int(sem.classes[bad])} not in table"
            )
    return sem


@dataclass(frozen=True)
class FrameRef:
    """One manifest row: where a frame's grid lives and how it is posed."""

    frame_index: int
    grid_path: str
    ego_pose: np.ndarray
    timestamp: float

    def __post_init__(self):
        object.__setattr__(self, "ego_pose", validate_pose(self.ego_pose))


@dataclass(frozen=True)
class SequenceManifest:
    sequence_id: str
    class_table: ClassTable
    frames: tuple[FrameRef, ...]
    boxes_path: Optional[str] = None
    base_dir: Optional[Path] = None

    def __post_init__(self):
        object.__setattr__(self, "frames", tuple(self.frames))
        if len(self.frames) < 1:
            raise ManifestError(f"{self.sequence_id}: manifest needs >= 1 frame")
        indices = [f.frame_index for f in self.frames]
        for i in range(1, len(indices)):
            if indices[i] <= indices[i - 1]:
                raise ManifestError(
                    f"{self.sequence_id}: frames[{i}].frame_index: "
                    "frame_index not increasing"
                )

    def resolve(self, rel: str) -> Path:
        base = self.base_dir if self.base_dir is not None else Path(".")
        return (base / rel).resolve()

    def grid_file(self, i: int) -> Path:
        return self.resolve(self.frames[i].grid_path)

    def boxes_file(self) -> Optional[Path]:
        return self.resolve(self.boxes_path) if self.boxes_path else None


def _class_table_from_yaml(items, where: str) -> ClassTable:
    try:
        entries = [
            ClassDef(class_id=e["id"], name=e["name"], role=e["role"]) for e in items
        ]
        return ClassTable(tuple(entries))
    except (KeyError, TypeError, ValueError) as exc:
        raise ManifestError(f"{where}: classes: {exc}") from exc


def _class_table_to_yaml(table: ClassTable) -> list:
    return [
        {"id": e.class_id, "name": e.name, "role": e.role} for e in table.entries
    ]


def load_manifest(path: PathLike) -> SequenceManifest:
    path = Path(path)
    try:
        doc = yaml.safe_load(path.read_text())
    except yaml.YAMLError as exc:
        raise ManifestError(f"{path}: {exc}") from exc
    if not isinstance(doc, dict):
        raise ManifestError(f"{path}: manifest must be a mapping")
    for key in ("sequence_id", "classes", "frames"):
        if key not in doc:
            raise ManifestError(f"{path}: missing key {key!r}")
    table = _class_table_from_yaml(doc["classes"], str(path))
    frames = []
    for i, row in enumerate(doc["frames"]):
        where = f"{path}: frames[{i}]"
        try:
            frames.append(
                FrameRef(
                    frame_index=int(row["frame_index"]),
                    grid_path=str(row["grid"]),
                    ego_pose=np.array(row["ego_pose"], dtype=np.float64),
                    timestamp=float(row.get("timestamp", 0.0)),
                )
            )
        except ManifestError:
            raise
        except Exception as exc:
            raise ManifestError(f"{where}: {exc}") from exc
    try:
        return SequenceManifest(
            sequence_id=str(doc["sequence_id"]),
            class_table=table,
            frames=tuple(frames),
            boxes_path=doc.get("boxes"),
            base_dir=path.parent,
        )
    except ManifestError as exc:
        raise ManifestError(f"{path}: {exc}") from exc


def save_manifest(manifest: SequenceManifest, path: PathLike) -> None:
    doc = {
        "sequence_id": manifest.sequence_id,
        "classes": _class_table_to_yaml(manifest.class_table),
        "frames": [
            {
                "frame_index": f.frame_index,
                "grid": f.grid_path,
                "timestamp": f.timestamp,
                "ego_pose": [[float(v) for v in row] for row in f.ego_pose],
            }
            for f in manifest.frames
        ],
    }
    if manifest.boxes_path:
        doc["boxes"] = manifest.boxes_path
    Path(path).write_text(yaml.safe_dump(doc, sort_keys=False))


def load_boxes(path: PathLike, table: Optional[ClassTable] = None) -> list[TrackedBox]:
    """Load box tracks, sorted by (frame_index, track_id)."""
    path = Path(path)
    try:
        doc = yaml.safe_load(path.read_text())
    except yaml.YAMLError as exc:
        raise ManifestError(f"{path}: {exc}") from exc
    if doc is None:
        return []
    if not isinstance(doc, dict) or "boxes" not in doc:
        raise ManifestError(f"{path}: missing key 'boxes'")
    if doc["boxes"] is None:
        return []
    boxes = []
    for i, row in enumerate(doc["boxes"]):
        where = f"{path}: boxes[{i}]"
        try:
            box = TrackedBox(
                center=tuple(row["center"]),
                size=tuple(row["size"]),
                yaw=row["yaw"],
                class_id=row["class_id"],
                track_id=row["track_id"],
                frame_index=row["frame_index"],
            )
        except KeyError as exc:
            raise ManifestError(f"{where}: missing field {exc}") from exc
        except (TypeError, ValueError) as exc:
            raise ManifestError(f"{where}: {exc}") from exc
        if table is not None:
            if box.class_id >= len(table) or table.role_of(box.class_id) != "thing":
                raise ManifestError(
                    f"{where}: class_id: {box.class_id} is not a thing class"
                )
        boxes.append(box)
    seen = set()
    for i, b in enumerate(boxes):
        key = (b.frame_index, b.track_id)
        if key in seen:
            raise ManifestError(
                f"{path}: boxes[{i}]: duplicate (frame_index, track_id) {key}"
            )
        seen.add(key)
    return sorted(boxes, key=lambda b: (b.frame_index, b.track_id))


def save_boxes(boxes: Sequence[TrackedBox], path: PathLike) -> None:
    doc = {
        "boxes": [
            {
                "frame_index": b.frame_index,
                "track_id": b.track_id,
                "class_id": b.class_id,
                "center": [float(v) for v in b.center],
                "size": [float(v) for v in b.size],
                "yaw": float(b.yaw),
            }
            for b in sorted(boxes, key=lambda b: (b.frame_index, b.track_id))
        ]
    }
    Path(path).write_text(yaml.safe_dump(doc, sort_keys=False))


def load_sequence(manifest: SequenceManifest, *, validate: bool = True):
    """Yield (FrameRef, PanopticGrid) for every manifest frame."""
    for i, ref in enumerate(manifest.frames):
        grid = read_grid(
            manifest.grid_file(i),
            class_table=manifest.class_table if validate else None,
            frame_index=ref.frame_index,
            ego_pose=ref.ego_pose,
        )
        yield ref, grid
