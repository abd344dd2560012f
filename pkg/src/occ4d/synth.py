"""Synthetic sequence generation and controlled corruption.

Scenarios are declarative: a grid, a class table, an ego motion model,
static ground/block geometry, and actors moving along waypoints. Render
produces semantic grids, per-frame box annotations, and reference
panoptic labels. The corruption side takes reference labels and applies
parameterized noise (label flips, morphology, id switches, drops) to
fabricate predictions with known defects.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np
import yaml

from .errors import ActorOutOfBounds, ManifestError, UnknownTrack
from .grid import (
    ClassDef,
    ClassTable,
    GridSpec,
    PanopticGrid,
    SemanticGrid,
    TrackedBox,
    apply_pose,
    grid_centers,
)
from .io import FrameRef, SequenceManifest, save_boxes, save_manifest, write_grid, write_semantic_grid
from .labels import generate_frame_labels
from .trackers.lifecycle import Proposal


@dataclass(frozen=True)
class Waypoint:
    frame: int
    center: tuple[float, float, float]
    yaw: float = 0.0


@dataclass(frozen=True)
class Actor:
    """A box-shaped mover; pose between waypoints is linearly interpolated."""

    track_id: int
    class_id: int
    size: tuple[float, float, float]
    waypoints: tuple[Waypoint, ...]

    def __post_init__(self):
        if not self.waypoints:
            raise ValueError("actor needs at least one waypoint")
        frames = [w.frame for w in self.waypoints]
        if frames != sorted(set(frames)):
            raise ValueError("waypoint frames must be strictly increasing")

    def pose_at(self, frame: int) -> tuple[tuple[float, float, float], float]:
        wps = self.waypoints
        if frame <= wps[0].frame:
            return wps[0].center, wps[0].yaw
        if frame >= wps[-1].frame:
            return wps[-1].center, wps[-1].yaw
        for a, b in zip(wps, wps[1:]):
            if a.frame <= frame <= b.frame:
                t = (frame - a.frame) / (b.frame - a.frame)
                c = tuple(
                    (1 - t) * ca + t * cb for ca, cb in zip(a.center, b.center)
                )
                return c, (1 - t) * a.yaw + t * b.yaw
        raise AssertionError("unreachable")

    def box_at(self, frame: int) -> TrackedBox:
        center, yaw = self.pose_at(frame)
        return TrackedBox(
            track_id=self.track_id,
            class_id=self.class_id,
            center=center,
            size=self.size,
            yaw=yaw,
            frame_index=frame,
        )


@dataclass(frozen=True)
class EgoMotion:
    """Ego trajectory; kind is static, straight, or arc."""

    kind: str = "static"
    speed: float = 0.0
    yaw0: float = 0.0
    yaw_rate: float = 0.0
    start: tuple[float, float, float] = (0.0, 0.0, 0.0)

    def __post_init__(self):
        if self.kind not in ("static", "straight", "arc"):
            raise ValueError(f"unknown ego motion kind {self.kind!r}")
        if self.kind == "arc" and self.yaw_rate == 0.0:
            raise ValueError("arc motion needs a nonzero yaw_rate")

    def pose_at(self, t: float) -> np.ndarray:
        x0, y0, z0 = self.start
        if self.kind == "static":
            x, y, yaw = x0, y0, self.yaw0
        elif self.kind == "straight":
            x = x0 + self.speed * t * math.cos(self.yaw0)
            y = y0 + self.speed * t * math.sin(self.yaw0)
            yaw = self.yaw0
        else:
            yaw = self.yaw0 + self.yaw_rate * t
            r = self.speed / self.yaw_rate
            x = x0 + r * (math.sin(yaw) - math.sin(self.yaw0))
            y = y0 - r * (math.cos(yaw) - math.cos(self.yaw0))
        c, s = math.cos(yaw), math.sin(yaw)
        pose = np.eye(4)
        pose[0, 0] = c
        pose[0, 1] = -s
        pose[1, 0] = s
        pose[1, 1] = c
        pose[0, 3] = x
        pose[1, 3] = y
        pose[2, 3] = z0
        return pose


@dataclass(frozen=True)
class Block:
    """Static world-frame axis-aligned box of one stuff class."""

    class_id: int
    min_corner: tuple[float, float, float]
    max_corner: tuple[float, float, float]


@dataclass(frozen=True)
class Frustum:
    """Visible region in the ego frame, axis-aligned in x and y."""

    x_range: tuple[float, float] = (-40.0, 40.0)
    y_range: tuple[float, float] = (-40.0, 40.0)


@dataclass(frozen=True)
class Scenario:
    spec: GridSpec
    table: ClassTable
    frames: int
    ego: EgoMotion = EgoMotion()
    rate_hz: float = 2.0
    ground_class: Optional[int] = None
    ground_layers: int = 1
    blocks: tuple[Block, ...] = ()
    actors: tuple[Actor, ...] = ()
    margin: float = 0.0
    frustum: Optional[Frustum] = None
    seed: int = 0
    sequence_id: str = "synth"

    def __post_init__(self):
        if self.frames < 1:
            raise ValueError("need at least one frame")
        # grid geometry travels through a 32-bit float header on disk;
        # snap here so rendered coordinates match what a reader computes
        f32 = lambda v: tuple(np.float32(x).item() for x in v)
        object.__setattr__(
            self,
            "spec",
            GridSpec(self.spec.dims, f32(self.spec.voxel_size), f32(self.spec.origin)),
        )
        ids = [a.track_id for a in self.actors]
        if len(ids) != len(set(ids)):
            raise ValueError("actor track ids must be unique")

    def timestamp(self, frame: int) -> float:
        return frame / self.rate_hz


def _check_margin(sc: Scenario, box: TrackedBox, pose: np.ndarray) -> None:
    """All eight oriented corners must sit inside the grid minus margin."""
    spec = sc.spec
    c, s = math.cos(box.yaw), math.sin(box.yaw)
    hx, hy, hz = (d / 2 for d in box.size)
    lo = np.asarray(spec.origin) + sc.margin
    hi = np.asarray(spec.max_corner) - sc.margin
    inv = np.linalg.inv(pose)
    for sx in (-1, 1):
        for sy in (-1, 1):
            for sz in (-1, 1):
                wx = box.center[0] + c * sx * hx - s * sy * hy
                wy = box.center[1] + s * sx * hx + c * sy * hy
                wz = box.center[2] + sz * hz
                g = inv @ np.array([wx, wy, wz, 1.0])
                if not ((lo <= g[:3]).all() and (g[:3] <= hi).all()):
                    raise ActorOutOfBounds(
                        box.frame_index,
                        box.track_id,
                        f"corner {g[:3].round(3).tolist()} outside "
                        f"[{lo.tolist()}, {hi.tolist()}]",
                    )


def _render_semantic(sc: Scenario, frame: int) -> tuple[SemanticGrid, list[TrackedBox]]:
    spec = sc.spec
    pose = sc.ego.pose_at(sc.timestamp(frame))
    classes_flat = np.full(spec.nvox, sc.table.free_id, dtype=np.uint16)

    centers = grid_centers(spec)
    world = apply_pose(pose, centers)

    if sc.ground_class is not None:
        nx, ny, nz = spec.dims
        gmask = np.zeros((nz, ny, nx), dtype=bool)
        gmask[: sc.ground_layers, :, :] = True
        classes_flat[gmask.reshape(-1)] = sc.ground_class

    for blk in sc.blocks:
        lo = np.asarray(blk.min_corner)
        hi = np.asarray(blk.max_corner)
        inside = ((world >= lo) & (world < hi)).all(axis=1)
        classes_flat[inside] = blk.class_id

    boxes = []
    for actor in sc.actors:
        box = actor.box_at(frame)
        _check_margin(sc, box, pose)
        boxes.append(box)
        c, s = math.cos(box.yaw), math.sin(box.yaw)
        hx, hy, hz = (d / 2 for d in box.size)
        dx = world[:, 0] - box.center[0]
        dy = world[:, 1] - box.center[1]
        dz = world[:, 2] - box.center[2]
        # cheap reject: axis-aligned window before the oriented test
        r = math.hypot(hx, hy)
        window = (
            (np.abs(dx) <= r) & (np.abs(dy) <= r) & (np.abs(dz) <= hz)
        )
        if not window.any():
            continue
        lx = c * dx[window] + s * dy[window]
        ly = c * dy[window] - s * dx[window]
        ok = (np.abs(lx) <= hx) & (np.abs(ly) <= hy)
        sel = np.flatnonzero(window)[ok]
        classes_flat[sel] = actor.class_id

    visibility = None
    if sc.frustum is not None:
        ego_pts = apply_pose(np.linalg.inv(pose), world)
        (x0, x1), (y0, y1) = sc.frustum.x_range, sc.frustum.y_range
        visibility = (
            (ego_pts[:, 0] >= x0)
            & (ego_pts[:, 0] <= x1)
            & (ego_pts[:, 1] >= y0)
            & (ego_pts[:, 1] <= y1)
        )

    sem = SemanticGrid(
        spec=spec,
        classes=classes_flat,
        visibility=visibility,
        frame_index=frame,
        ego_pose=pose,
    )
    return sem, boxes


def render_sequence(
    sc: Scenario,
) -> tuple[SequenceManifest, list[SemanticGrid], list[list[TrackedBox]], list[PanopticGrid]]:
    """Render every frame in memory: semantics, boxes, reference labels."""
    sems: list[SemanticGrid] = []
    boxes_per_frame: list[list[TrackedBox]] = []
    gts: list[PanopticGrid] = []
    refs: list[FrameRef] = []
    for f in range(sc.frames):
        sem, boxes = _render_semantic(sc, f)
        gt = generate_frame_labels(sem, boxes, sc.table)
        sems.append(sem)
        boxes_per_frame.append(boxes)
        gts.append(gt)
        refs.append(
            FrameRef(
                frame_index=f,
                grid_path=f"frames/{f:06d}.occ",
                ego_pose=sem.ego_pose,
                timestamp=sc.timestamp(f),
            )
        )
    manifest = SequenceManifest(
        sequence_id=sc.sequence_id,
        class_table=sc.table,
        frames=refs,
        boxes_path="boxes.yaml",
    )
    return manifest, sems, boxes_per_frame, gts


def write_sequence(sc: Scenario, out_dir) -> SequenceManifest:
    """Render and persist a scenario: gt/ holds panoptic labels, semantic/
    the label-free inputs, boxes.yaml the per-frame annotations."""
    from pathlib import Path

    out = Path(out_dir)
    manifest, sems, boxes_per_frame, gts = render_sequence(sc)
    (out / "gt" / "frames").mkdir(parents=True, exist_ok=True)
    (out / "semantic" / "frames").mkdir(parents=True, exist_ok=True)
    for ref, sem, gt in zip(manifest.frames, sems, gts):
        write_grid(gt, out / "gt" / ref.grid_path)
        write_semantic_grid(sem, out / "semantic" / ref.grid_path)
    all_boxes = [b for frame in boxes_per_frame for b in frame]
    save_boxes(all_boxes, out / "gt" / "boxes.yaml")
    save_boxes(all_boxes, out / "semantic" / "boxes.yaml")
    gt_manifest = replace(manifest, base_dir=out / "gt")
    save_manifest(gt_manifest, out / "gt" / "manifest.yaml")
    sem_manifest = replace(manifest, base_dir=out / "semantic")
    save_manifest(sem_manifest, out / "semantic" / "manifest.yaml")
    return gt_manifest


@dataclass(frozen=True)
class IdSwitch:
    frame: int
    track_id: int


@dataclass(frozen=True)
class Drop:
    track_id: int
    start: int
    end: int  # inclusive


@dataclass(frozen=True)
class NoiseSpec:
    """Corruption parameters; all fields optional with inert defaults."""

    class_flip_prob: dict[int, float] = field(default_factory=dict)
    erosion_radius: int = 0
    dilation_radius: int = 0
    id_switches: tuple[IdSwitch, ...] = ()
    drops: tuple[Drop, ...] = ()
    score_mean: float = 0.8
    score_sigma: float = 0.05
    seed: int = 0


def _flip_classes(
    grid: PanopticGrid,
    table: ClassTable,
    probs: dict[int, float],
    rng: np.random.Generator,
    fresh_ids: dict[tuple[int, int], int],
    next_fresh: list[int],
) -> PanopticGrid:
    classes = np.array(grid.classes)
    instances = np.array(grid.instances)
    thing = table.thing_mask()
    candidates = sorted(
        c for c in range(len(table.entries)) if c != table.free_id
    )
    for src in sorted(probs):
        p = probs[src]
        if p <= 0:
            continue
        sel = np.flatnonzero(grid.classes == src)
        if sel.size == 0:
            continue
        u = rng.random(sel.size)
        flip = sel[u < p]
        if flip.size == 0:
            continue
        targets = [c for c in candidates if c != src]
        pick = rng.integers(0, len(targets), size=flip.size)
        for t_idx in range(len(targets)):
            tgt = targets[t_idx]
            vox = flip[pick == t_idx]
            if vox.size == 0:
                continue
            classes[vox] = tgt
            if thing[tgt]:
                if not thing[src]:
                    key = (grid.frame_index, tgt)
                    if key not in fresh_ids:
                        fresh_ids[key] = next_fresh[0]
                        next_fresh[0] += 1
                    instances[vox] = fresh_ids[key]
                # thing -> thing keeps the instance id
            else:
                instances[vox] = 0
    return replace(grid, classes=classes, instances=instances)


def _morph(
    grid: PanopticGrid, table: ClassTable, erosion: int, dilation: int
) -> PanopticGrid:
    from scipy import ndimage

    if erosion <= 0 and dilation <= 0:
        return grid
    nx, ny, nz = grid.spec.dims
    shape = (nz, ny, nx)
    classes = np.array(grid.classes)
    instances = np.array(grid.instances)
    thing = table.thing_mask()
    tube = thing[classes] & (instances != 0)
    ids = np.unique(instances[tube])
    struct = ndimage.generate_binary_structure(3, 1)
    if erosion > 0:
        for vid in ids.tolist():
            mask3 = ((instances == vid) & tube).reshape(shape)
            shrunk = ndimage.binary_erosion(
                mask3, structure=struct, iterations=erosion
            )
            removed = (mask3 & ~shrunk).reshape(-1)
            classes[removed] = table.free_id
            instances[removed] = 0
        tube = thing[classes] & (instances != 0)
    if dilation > 0:
        free = classes == table.free_id
        claimed = np.zeros(grid.spec.nvox, dtype=bool)
        for vid in sorted(np.unique(instances[tube]).tolist()):
            mask3 = ((instances == vid) & tube).reshape(shape)
            grown = ndimage.binary_dilation(
                mask3, structure=struct, iterations=dilation
            )
            gained = grown.reshape(-1) & free & ~claimed & ~mask3.reshape(-1)
            if not gained.any():
                continue
            vcls = classes[(instances == vid) & tube][0]
            classes[gained] = vcls
            instances[gained] = vid
            claimed |= gained
    return replace(grid, classes=classes, instances=instances)


def corrupt(
    gts: Sequence[PanopticGrid],
    noise: NoiseSpec,
    table: ClassTable,
) -> tuple[list[PanopticGrid], list[list[Proposal]]]:
    """Apply noise to reference labels, yielding predictions plus scored
    per-frame proposals describing the corrupted instances."""
    gt_ids: set[int] = set()
    thing = table.thing_mask()
    for g in gts:
        tube = thing[g.classes] & (g.instances != 0)
        gt_ids.update(np.unique(g.instances[tube]).tolist())
    for sw in noise.id_switches:
        if sw.track_id not in gt_ids:
            raise UnknownTrack(f"id_switch targets unknown track {sw.track_id}")
        if not any(g.frame_index == sw.frame for g in gts):
            raise UnknownTrack(
                f"id_switch for track {sw.track_id} names missing frame {sw.frame}"
            )
    for dr in noise.drops:
        if dr.track_id not in gt_ids:
            raise UnknownTrack(f"drop targets unknown track {dr.track_id}")
        if dr.start > dr.end:
            raise ValueError("drop start must not exceed end")

    rng = np.random.default_rng(noise.seed)
    max_gt = max(gt_ids, default=0)
    next_fresh = [max_gt + 1]
    fresh_ids: dict[tuple[int, int], int] = {}
    lineage: dict[int, int] = {}

    preds: list[PanopticGrid] = []
    seen_pred_ids: set[int] = set()
    proposals: list[list[Proposal]] = []
    for g in gts:
        out = _flip_classes(g, table, noise.class_flip_prob, rng, fresh_ids, next_fresh)
        out = _morph(out, table, noise.erosion_radius, noise.dilation_radius)

        for sw in noise.id_switches:
            if sw.frame == g.frame_index:
                lineage[sw.track_id] = next_fresh[0]
                next_fresh[0] += 1
        if lineage:
            instances = np.array(out.instances)
            for orig in sorted(lineage):
                cur = lineage[orig]
                instances[out.instances == orig] = cur
            out = replace(out, instances=instances)

        drop_now = [
            dr for dr in noise.drops if dr.start <= g.frame_index <= dr.end
        ]
        if drop_now:
            classes = np.array(out.classes)
            instances = np.array(out.instances)
            for dr in drop_now:
                cur = lineage.get(dr.track_id, dr.track_id)
                hit = instances == cur
                classes[hit] = table.free_id
                instances[hit] = 0
            out = replace(out, classes=classes, instances=instances)

        frame_props: list[Proposal] = []
        tube = thing[out.classes] & (out.instances != 0)
        for vid in sorted(np.unique(out.instances[tube]).tolist()):
            sel = (out.instances == vid) & tube
            votes = np.bincount(out.classes[sel].astype(np.int64))
            cid = int(np.flatnonzero(votes == votes.max())[0])
            score = float(
                np.clip(rng.normal(noise.score_mean, noise.score_sigma), 0.0, 1.0)
            )
            frame_props.append(
                Proposal(
                    frame_index=g.frame_index,
                    class_id=cid,
                    score=score,
                    origin="emerging" if vid not in seen_pred_ids else "tracked",
                    instance_id=vid,
                    track_id=None if vid not in seen_pred_ids else vid,
                    voxel_count=int(sel.sum()),
                )
            )
            seen_pred_ids.add(vid)
        for cid in sorted(set(np.unique(out.classes).tolist())):
            if cid == table.free_id or thing[cid]:
                continue
            score = float(
                np.clip(rng.normal(noise.score_mean, noise.score_sigma), 0.0, 1.0)
            )
            frame_props.append(
                Proposal(
                    frame_index=g.frame_index,
                    class_id=cid,
                    score=score,
                    origin="emerging",
                    instance_id=None,
                    voxel_count=int((out.classes == cid).sum()),
                )
            )
        preds.append(out)
        proposals.append(frame_props)
    return preds, proposals


def _class_id_by_name(table: ClassTable, name: str) -> int:
    cd = table.by_name(name)
    return cd.class_id


def scenario_from_dict(doc: dict) -> Scenario:
    """Build a scenario from a parsed YAML document."""
    try:
        grid = doc["grid"]
        spec = GridSpec(
            tuple(grid["dims"]), tuple(grid["voxel_size"]), tuple(grid["origin"])
        )
        table = ClassTable(
            tuple(
                ClassDef(class_id=c["id"], name=c["name"], role=c["role"])
                for c in doc["classes"]
            )
        )
        ego_doc = doc.get("ego", {}) or {}
        ego = EgoMotion(
            kind=ego_doc.get("kind", "static"),
            speed=float(ego_doc.get("speed", 0.0)),
            yaw0=float(ego_doc.get("yaw0", 0.0)),
            yaw_rate=float(ego_doc.get("yaw_rate", 0.0)),
            start=tuple(ego_doc.get("start", (0.0, 0.0, 0.0))),
        )
        ground = doc.get("ground")
        blocks = tuple(
            Block(
                class_id=_class_id_by_name(table, b["class"]),
                min_corner=tuple(b["min"]),
                max_corner=tuple(b["max"]),
            )
            for b in doc.get("blocks", ())
        )
        actors = tuple(
            Actor(
                track_id=a["track_id"],
                class_id=_class_id_by_name(table, a["class"]),
                size=tuple(a["size"]),
                waypoints=tuple(
                    Waypoint(
                        frame=w["frame"],
                        center=tuple(w["center"]),
                        yaw=float(w.get("yaw", 0.0)),
                    )
                    for w in a["waypoints"]
                ),
            )
            for a in doc.get("actors", ())
        )
        frustum = None
        if "frustum" in doc and doc["frustum"] is not None:
            fr = doc["frustum"]
            frustum = Frustum(
                x_range=tuple(fr["x_range"]), y_range=tuple(fr["y_range"])
            )
        return Scenario(
            spec=spec,
            table=table,
            frames=int(doc["frames"]),
            ego=ego,
            rate_hz=float(doc.get("rate_hz", 2.0)),
            ground_class=(
                _class_id_by_name(table, ground["class"]) if ground else None
            ),
            ground_layers=int(ground.get("layers", 1)) if ground else 1,
            blocks=blocks,
            actors=actors,
            margin=float(doc.get("margin", 0.0)),
            frustum=frustum,
            seed=int(doc.get("seed", 0)),
            sequence_id=str(doc.get("sequence_id", "synth")),
        )
    except KeyError as e:
        raise ManifestError(f"scenario is missing required key {e.args[0]!r}") from e


def load_scenario(path) -> Scenario:
    with open(path, "r") as f:
        doc = yaml.safe_load(f)
    if not isinstance(doc, dict):
        raise ManifestError(f"{path}: scenario document must be a mapping")
    return scenario_from_dict(doc)


def noise_from_dict(doc: dict, table: ClassTable) -> NoiseSpec:
    flips = {}
    for name, p in (doc.get("class_flip_prob") or {}).items():
        flips[_class_id_by_name(table, name)] = float(p)
    switches = tuple(
        IdSwitch(frame=int(s["frame"]), track_id=int(s["track_id"]))
        for s in doc.get("id_switches", ())
    )
    drops = tuple(
        Drop(track_id=int(d["track_id"]), start=int(d["start"]), end=int(d["end"]))
        for d in doc.get("drops", ())
    )
    return NoiseSpec(
        class_flip_prob=flips,
        erosion_radius=int(doc.get("erosion_radius", 0)),
        dilation_radius=int(doc.get("dilation_radius", 0)),
        id_switches=switches,
        drops=drops,
        score_mean=float(doc.get("score_mean", 0.8)),
        score_sigma=float(doc.get("score_sigma", 0.05)),
        seed=int(doc.get("seed", 0)),
    )


def load_noise(path, table: ClassTable) -> NoiseSpec:
    with open(path, "r") as f:
        doc = yaml.safe_load(f)
    if not isinstance(doc, dict):
        raise ManifestError(f"{path}: noise document must be a mapping")
    return noise_from_dict(doc, table)
