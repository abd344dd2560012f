"""Command-line surface: synth, gen-labels, eval, corrupt, track.

Exit codes: 0 success, 2 validation failure, 3 missing data, 4 missing
proposal scores, 1 internal error. Every command is deterministic given
its inputs plus seed, and never mutates its inputs.
"""

from __future__ import annotations

import csv
import functools
import json
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Optional, Sequence

import click
import numpy as np
import yaml

from . import metrics as metrics_mod
from .errors import (
    ActorOutOfBounds,
    ClassTableMismatch,
    EmptyAccumulator,
    FrameMismatch,
    GridFormatError,
    ManifestError,
    MissingClassTableEntry,
    NonFiniteWeight,
    SpecMismatch,
    TrackClassConflict,
    UnknownTrack,
    UnknownTrackId,
    WeightOutOfRange,
)
from .grid import ClassTable, PanopticGrid, TrackedBox
from .io import (
    SequenceManifest,
    load_boxes,
    load_manifest,
    read_grid,
    read_semantic_grid,
    save_boxes,
    save_manifest,
    write_grid,
)
from .labels import generate_frame_labels
from .synth import corrupt as corrupt_fn
from .synth import load_noise, load_scenario, write_sequence
from .trackers import (
    BoxTracker,
    KalmanConfig,
    LifecycleParams,
    LifecycleState,
    OverlapTracker,
    Proposal,
    instances_to_boxes,
    lifecycle_step,
)


class _MissingData(Exception):
    """Input exists syntactically but references data that is not there."""


class _MissingScores(Exception):
    """Lifecycle tracking was requested without a proposal score stream."""


_VALIDATION_ERRORS = (
    ManifestError,
    SpecMismatch,
    ClassTableMismatch,
    FrameMismatch,
    MissingClassTableEntry,
    GridFormatError,
    ActorOutOfBounds,
    UnknownTrack,
    UnknownTrackId,
    TrackClassConflict,
    NonFiniteWeight,
    WeightOutOfRange,
    EmptyAccumulator,
    ValueError,
    yaml.YAMLError,
)


def _exit_code(exc: BaseException) -> int:
    if isinstance(exc, _MissingScores):
        return 4
    if isinstance(exc, (_MissingData, FileNotFoundError)):
        return 3
    if isinstance(exc, _VALIDATION_ERRORS):
        return 2
    return 1


def _guarded(fn):
    @functools.wraps(fn)
    def inner(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except (SystemExit, KeyboardInterrupt, click.ClickException, click.Abort):
            raise
        except BaseException as exc:
            click.echo(f"error: {type(exc).__name__}: {exc}", err=True)
            raise SystemExit(_exit_code(exc))

    return inner


def _default_threads() -> int:
    raw = os.environ.get("OCC4D_THREADS", "").strip()
    if raw:
        try:
            n = int(raw)
        except ValueError:
            raise click.BadParameter(
                f"OCC4D_THREADS must be an integer, got {raw!r}"
            )
        if n >= 1:
            return n
        raise click.BadParameter("OCC4D_THREADS must be >= 1")
    return 1


@click.group()
@click.version_option(package_name="occ4d", prog_name="occ4d")
def main():
    """Streaming evaluation and tracking tools for 4D panoptic occupancy."""


# ---------------------------------------------------------------- synth


@main.command("synth")
@click.option("--scenario", "scenario_path", required=True, type=click.Path())
@click.option("--out", "out_dir", required=True, type=click.Path())
@click.option("--seed", type=int, default=None, help="Override the scenario seed.")
@_guarded
def cmd_synth(scenario_path: str, out_dir: str, seed: Optional[int]):
    """Render a scenario to gt/ and semantic/ sequence directories."""
    sc = load_scenario(scenario_path)
    if seed is not None:
        sc = replace(sc, seed=seed)
    manifest = write_sequence(sc, out_dir)
    click.echo(
        f"wrote {len(manifest.frames)} frames, {len(sc.actors)} actors to {out_dir}"
    )


# ----------------------------------------------------------- gen-labels


def _remove_outputs(paths: list[Path]) -> None:
    for p in paths:
        try:
            p.unlink()
        except OSError:
            pass


@main.command("gen-labels")
@click.option("--semantic", "semantic_path", required=True, type=click.Path())
@click.option(
    "--boxes",
    "boxes_path",
    type=click.Path(),
    default=None,
    help="Box annotations; defaults to the manifest's boxes entry.",
)
@click.option("--out", "out_dir", required=True, type=click.Path())
@_guarded
def cmd_gen_labels(semantic_path: str, boxes_path: Optional[str], out_dir: str):
    """Generate panoptic labels from semantic grids plus tracked boxes."""
    manifest = load_manifest(semantic_path)
    table = manifest.class_table
    if boxes_path is not None:
        boxes = load_boxes(boxes_path, table)
    elif manifest.boxes_file() is not None:
        boxes = load_boxes(manifest.boxes_file(), table)
    else:
        boxes = []

    known = {ref.frame_index for ref in manifest.frames}
    for b in boxes:
        if b.frame_index not in known:
            raise FrameMismatch(
                f"boxes reference frame {b.frame_index} absent from the manifest"
            )
    by_frame: dict[int, list[TrackedBox]] = {}
    for b in boxes:
        by_frame.setdefault(b.frame_index, []).append(b)

    out = Path(out_dir)
    (out / "frames").mkdir(parents=True, exist_ok=True)
    written: list[Path] = []
    totals = np.zeros(len(table), dtype=np.int64)
    try:
        for i, ref in enumerate(manifest.frames):
            sem = read_semantic_grid(
                manifest.grid_file(i),
                class_table=table,
                frame_index=ref.frame_index,
                ego_pose=ref.ego_pose,
            )
            gt = generate_frame_labels(sem, by_frame.get(ref.frame_index, []), table)
            dest = out / "frames" / f"{ref.frame_index:06d}.occ"
            write_grid(gt, dest)
            written.append(dest)
            totals += np.bincount(
                gt.classes.astype(np.int64), minlength=len(table)
            )
        new_frames = tuple(
            replace(ref, grid_path=f"frames/{ref.frame_index:06d}.occ")
            for ref in manifest.frames
        )
        if boxes:
            save_boxes(boxes, out / "boxes.yaml")
            written.append(out / "boxes.yaml")
        out_manifest = SequenceManifest(
            sequence_id=manifest.sequence_id,
            class_table=table,
            frames=new_frames,
            boxes_path="boxes.yaml" if boxes else None,
            base_dir=out,
        )
        save_manifest(out_manifest, out / "manifest.yaml")
        written.append(out / "manifest.yaml")
    except BaseException:
        _remove_outputs(written)
        raise
    for cid in range(len(table)):
        click.echo(f"class {table.name_of(cid)}: {int(totals[cid])} voxels")
    click.echo(f"wrote {len(manifest.frames)} labeled frames to {out_dir}")


# ----------------------------------------------------------------- eval


_METRIC_CHOICES = ("occstq", "pq", "pqstar")


@dataclass(frozen=True)
class EvalRequest:
    """Validated parameters for one evaluation run."""

    gt_path: Path
    pred_path: Path
    metric_set: tuple[str, ...]
    visible_only: bool
    out_path: Path
    threads: int

    def __post_init__(self):
        if not self.metric_set:
            raise ValueError("metric set must not be empty")
        for m in self.metric_set:
            if m not in _METRIC_CHOICES:
                raise ValueError(
                    f"unknown metric {m!r}; choose from {', '.join(_METRIC_CHOICES)}"
                )
        if self.out_path in (self.gt_path, self.pred_path):
            raise ValueError("output path must differ from the input manifests")
        if self.threads < 1:
            raise ValueError("threads must be >= 1")


def _load_pairs(
    gt_manifest: SequenceManifest,
    pred_manifest: SequenceManifest,
    indices: Sequence[int],
):
    gt_by_frame = {r.frame_index: i for i, r in enumerate(gt_manifest.frames)}
    pred_by_frame = {r.frame_index: i for i, r in enumerate(pred_manifest.frames)}
    for fi in indices:
        gi = gt_by_frame[fi]
        pi = pred_by_frame[fi]
        gref = gt_manifest.frames[gi]
        pref = pred_manifest.frames[pi]
        gt = read_grid(
            gt_manifest.grid_file(gi),
            class_table=gt_manifest.class_table,
            frame_index=gref.frame_index,
            ego_pose=gref.ego_pose,
        )
        pred = read_grid(
            pred_manifest.grid_file(pi),
            class_table=pred_manifest.class_table,
            frame_index=pref.frame_index,
            ego_pose=pref.ego_pose,
        )
        yield gt, pred


def _pct(v: Optional[float]) -> str:
    return "n/a" if v is None else f"{100.0 * v:.1f}"


@main.command("eval")
@click.option("--gt", "gt_path", required=True, type=click.Path())
@click.option("--pred", "pred_path", required=True, type=click.Path())
@click.option(
    "--metrics",
    "metrics_arg",
    default="occstq,pq,pqstar",
    show_default=True,
    help="Comma-separated subset of occstq, pq, pqstar.",
)
@click.option("--visible-only/--no-visible-only", default=True, show_default=True)
@click.option(
    "--threads",
    type=int,
    default=_default_threads,
    help="Worker threads [default: OCC4D_THREADS or 1].",
)
@click.option(
    "--out",
    "out_path",
    type=click.Path(),
    default="report.json",
    show_default=True,
)
@_guarded
def cmd_eval(
    gt_path: str,
    pred_path: str,
    metrics_arg: str,
    visible_only: bool,
    threads: int,
    out_path: str,
):
    """Evaluate a predicted sequence against ground truth."""
    req = EvalRequest(
        gt_path=Path(gt_path),
        pred_path=Path(pred_path),
        metric_set=tuple(
            m.strip() for m in metrics_arg.split(",") if m.strip()
        ),
        visible_only=visible_only,
        out_path=Path(out_path),
        threads=threads,
    )
    gt_manifest = load_manifest(req.gt_path)
    pred_manifest = load_manifest(req.pred_path)
    if gt_manifest.class_table != pred_manifest.class_table:
        raise ClassTableMismatch("gt and pred manifests declare different classes")
    gt_frames = {r.frame_index for r in gt_manifest.frames}
    pred_frames = {r.frame_index for r in pred_manifest.frames}
    if gt_frames != pred_frames:
        missing = sorted(gt_frames ^ pred_frames)
        raise _MissingData(
            f"manifests disagree on frames; unmatched indices {missing}"
        )

    modes = []
    if "pq" in req.metric_set:
        modes.append("threshold")
    if "pqstar" in req.metric_set:
        modes.append("max_weight")
    indices = sorted(gt_frames)
    nchunks = min(req.threads, len(indices))
    bounds = [
        (len(indices) * k // nchunks, len(indices) * (k + 1) // nchunks)
        for k in range(nchunks)
    ]

    def work(chunk: Sequence[int]):
        return metrics_mod.evaluate_pair_stream(
            gt_manifest.class_table,
            _load_pairs(gt_manifest, pred_manifest, chunk),
            modes=tuple(modes),
            visible_only=req.visible_only,
        )

    if nchunks == 1:
        results = [work(indices)]
    else:
        with ThreadPoolExecutor(max_workers=nchunks) as pool:
            results = list(pool.map(work, [indices[a:b] for a, b in bounds]))
    acc = metrics_mod.merge_all(r[0] for r in results)
    rows = [row for _, chunk_rows in results for row in chunk_rows]
    report = metrics_mod.finalize(acc)

    req.out_path.parent.mkdir(parents=True, exist_ok=True)
    req.out_path.write_text(report.to_json())
    csv_path = req.out_path.with_name(req.out_path.stem + "_frames.csv")
    with open(csv_path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["frame_index", "voxels_evaluated", "pq", "pq_star"])
        for row in rows:
            w.writerow(
                [
                    row.frame_index,
                    row.voxels_evaluated,
                    "" if row.pq is None else repr(row.pq),
                    "" if row.pq_star is None else repr(row.pq_star),
                ]
            )

    if "occstq" in req.metric_set:
        click.echo(f"OccSTQ: {_pct(report.occ_stq)}")
        click.echo(f"OccSQ: {_pct(report.occ_sq)}")
        click.echo(f"OccAQ: {_pct(report.occ_aq)}")
    if "pq" in req.metric_set:
        click.echo(f"PQ: {_pct(report.pq)}")
    if "pqstar" in req.metric_set:
        click.echo(f"PQ*: {_pct(report.pq_star)}")
    click.echo(f"report: {req.out_path}")


# -------------------------------------------------------------- corrupt


@main.command("corrupt")
@click.option("--gt", "gt_path", required=True, type=click.Path())
@click.option("--noise", "noise_path", required=True, type=click.Path())
@click.option("--out", "out_dir", required=True, type=click.Path())
@click.option("--seed", type=int, default=None, help="Override the noise seed.")
@_guarded
def cmd_corrupt(gt_path: str, noise_path: str, out_dir: str, seed: Optional[int]):
    """Degrade a ground-truth sequence into a synthetic prediction."""
    manifest = load_manifest(gt_path)
    table = manifest.class_table
    noise = load_noise(noise_path, table)
    if seed is not None:
        noise = replace(noise, seed=seed)
    gts = []
    for i, ref in enumerate(manifest.frames):
        gts.append(
            read_grid(
                manifest.grid_file(i),
                class_table=table,
                frame_index=ref.frame_index,
                ego_pose=ref.ego_pose,
            )
        )
    preds, proposals = corrupt_fn(gts, noise, table)

    out = Path(out_dir)
    (out / "frames").mkdir(parents=True, exist_ok=True)
    new_frames = []
    for ref, pred in zip(manifest.frames, preds):
        rel = f"frames/{ref.frame_index:06d}.occ"
        write_grid(pred, out / rel)
        new_frames.append(replace(ref, grid_path=rel))
    out_manifest = SequenceManifest(
        sequence_id=manifest.sequence_id,
        class_table=table,
        frames=tuple(new_frames),
        boxes_path=None,
        base_dir=out,
    )
    save_manifest(out_manifest, out / "manifest.yaml")
    doc = {
        "frames": [
            {
                "frame_index": ref.frame_index,
                "proposals": [
                    {
                        "instance_id": p.instance_id,
                        "class_id": p.class_id,
                        "score": p.score,
                        "origin": p.origin,
                        "voxel_count": p.voxel_count,
                    }
                    for p in props
                ],
            }
            for ref, props in zip(manifest.frames, proposals)
        ]
    }
    (out / "proposals.json").write_text(json.dumps(doc, indent=2) + "\n")
    total = sum(len(p) for p in proposals)
    click.echo(f"wrote {len(preds)} frames, {total} proposals to {out_dir}")


# ---------------------------------------------------------------- track


def _relabel_instances(
    grid: PanopticGrid,
    table: ClassTable,
    mapping: dict[int, int],
) -> PanopticGrid:
    """Replace producer instance ids via mapping; unmapped thing voxels are
    demoted to the fallback stuff class (or free when the table lacks one)."""
    thing = table.thing_mask()
    tube = thing[grid.classes] & (grid.instances != 0)
    classes = np.array(grid.classes)
    instances = np.array(grid.instances)
    demote_to = table.fallback_stuff_id()
    if demote_to is None:
        demote_to = table.free_id
    for vid in sorted(np.unique(instances[tube]).tolist()):
        sel = (instances == vid) & tube
        tid = mapping.get(vid)
        if tid is None:
            classes[sel] = demote_to
            instances[sel] = 0
        else:
            instances[sel] = tid
    return replace(grid, classes=classes, instances=instances)


def _track_overlap(
    manifest: SequenceManifest, config: dict
) -> tuple[list[PanopticGrid], int, int, int]:
    table = manifest.class_table
    tracker = OverlapTracker(table, min_iou=float(config.get("min_iou", 0.1)))
    outs = []
    for i, ref in enumerate(manifest.frames):
        grid = read_grid(
            manifest.grid_file(i),
            class_table=table,
            frame_index=ref.frame_index,
            ego_pose=ref.ego_pose,
        )
        outs.append(tracker.step(grid))
    births = sum(t.births for t in tracker.transitions)
    deaths = sum(t.deaths for t in tracker.transitions)
    return outs, tracker.next_id - 1, births, deaths


def _track_ab3dmot(
    manifest: SequenceManifest, config: dict
) -> tuple[list[PanopticGrid], int, int, int]:
    table = manifest.class_table
    known = {f.name for f in KalmanConfig.__dataclass_fields__.values()}
    bad = set(config) - known
    if bad:
        raise ValueError(f"unknown kalman config keys {sorted(bad)}")
    cfg = KalmanConfig(**config)
    tracker = BoxTracker(cfg)
    outs = []
    births = 0
    deaths = 0
    prev_active: set[int] = set()
    for i, ref in enumerate(manifest.frames):
        grid = read_grid(
            manifest.grid_file(i),
            class_table=table,
            frame_index=ref.frame_index,
            ego_pose=ref.ego_pose,
        )
        dets = instances_to_boxes(grid, table)
        ids = tracker.step(dets)
        mapping = {d.local_id: tid for d, tid in zip(dets, ids)}
        outs.append(_relabel_instances(grid, table, mapping))
        active = {t.track_id for t in tracker.tracks}
        births += len(active - prev_active)
        deaths += len(prev_active - active)
        prev_active = active
    return outs, tracker.next_id - 1, births, deaths


def _load_proposal_frames(path: Path) -> dict[int, list[dict]]:
    try:
        doc = json.loads(path.read_text())
    except FileNotFoundError:
        raise _MissingScores(f"proposal stream {path} does not exist")
    frames = doc.get("frames")
    if not isinstance(frames, list):
        raise ValueError(f"{path}: expected a top-level 'frames' list")
    out: dict[int, list[dict]] = {}
    for entry in frames:
        out[int(entry["frame_index"])] = list(entry.get("proposals", []))
    return out


def _track_lifecycle(
    manifest: SequenceManifest, config: dict, proposals_path: Optional[Path]
) -> tuple[list[PanopticGrid], int, int, int]:
    table = manifest.class_table
    if proposals_path is None:
        raise _MissingScores(
            "method=lifecycle needs --proposals with scored instances"
        )
    by_frame = _load_proposal_frames(proposals_path)
    params = LifecycleParams(
        entrance=float(config.get("entrance", 0.3)),
        exit=float(config.get("exit", 0.25)),
        patience=int(config.get("patience", 3)),
    )
    state = LifecycleState(table, params)
    id_map: dict[int, int] = {}  # producer instance id -> track id
    rev: dict[int, int] = {}
    births = 0
    deaths = 0
    outs = []
    for i, ref in enumerate(manifest.frames):
        grid = read_grid(
            manifest.grid_file(i),
            class_table=table,
            frame_index=ref.frame_index,
            ego_pose=ref.ego_pose,
        )
        props: list[Proposal] = []
        for p in by_frame.get(ref.frame_index, []):
            if "score" not in p or p["score"] is None:
                raise _MissingScores(
                    f"proposal in frame {ref.frame_index} lacks a score"
                )
            pid = p.get("instance_id")
            origin = p.get("origin", "emerging")
            track_id = None
            if origin == "tracked":
                track_id = id_map.get(pid)
                if track_id is None:
                    # spawn was refused or track already terminated
                    origin = "emerging"
            props.append(
                Proposal(
                    frame_index=ref.frame_index,
                    class_id=int(p["class_id"]),
                    score=float(p["score"]),
                    origin=origin,
                    instance_id=pid,
                    track_id=track_id,
                    voxel_count=int(p.get("voxel_count", 1)),
                )
            )
        decisions, state = lifecycle_step(state, props)
        for d in decisions:
            if d.action == "spawn":
                pid = d.proposal.instance_id
                if pid is not None:
                    id_map[pid] = d.track_id
                    rev[d.track_id] = pid
                births += 1
            elif d.action == "terminate":
                deaths += 1
                pid = rev.pop(d.track_id, None)
                if pid is not None and id_map.get(pid) == d.track_id:
                    del id_map[pid]
        outs.append(_relabel_instances(grid, table, dict(id_map)))
    return outs, state.next_id - 1, births, deaths


@main.command("track")
@click.option("--pred", "pred_path", required=True, type=click.Path())
@click.option(
    "--method",
    required=True,
    type=click.Choice(["overlap", "ab3dmot", "lifecycle"]),
)
@click.option("--config", "config_path", type=click.Path(), default=None)
@click.option(
    "--proposals",
    "proposals_path",
    type=click.Path(),
    default=None,
    help="Scored proposal stream (required for method=lifecycle).",
)
@click.option("--out", "out_dir", required=True, type=click.Path())
@_guarded
def cmd_track(
    pred_path: str,
    method: str,
    config_path: Optional[str],
    proposals_path: Optional[str],
    out_dir: str,
):
    """Re-assign instance ids over time with the chosen association method."""
    manifest = load_manifest(pred_path)
    config: dict = {}
    if config_path is not None:
        doc = yaml.safe_load(Path(config_path).read_text())
        if doc is None:
            doc = {}
        if not isinstance(doc, dict):
            raise ValueError(f"{config_path}: config must be a mapping")
        config = doc
    if method == "overlap":
        outs, tracks, births, deaths = _track_overlap(manifest, config)
    elif method == "ab3dmot":
        outs, tracks, births, deaths = _track_ab3dmot(manifest, config)
    else:
        outs, tracks, births, deaths = _track_lifecycle(
            manifest,
            config,
            Path(proposals_path) if proposals_path else None,
        )

    out = Path(out_dir)
    (out / "frames").mkdir(parents=True, exist_ok=True)
    new_frames = []
    for ref, grid in zip(manifest.frames, outs):
        rel = f"frames/{ref.frame_index:06d}.occ"
        write_grid(grid, out / rel)
        new_frames.append(replace(ref, grid_path=rel))
    out_manifest = SequenceManifest(
        sequence_id=manifest.sequence_id,
        class_table=manifest.class_table,
        frames=tuple(new_frames),
        boxes_path=None,
        base_dir=out,
    )
    save_manifest(out_manifest, out / "manifest.yaml")
    click.echo(f"tracks: {tracks}")
    click.echo(f"births: {births}")
    click.echo(f"deaths: {deaths}")


if __name__ == "__main__":
    main()
