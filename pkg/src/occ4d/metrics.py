"""Streaming panoptic occupancy metrics.

The accumulator holds integer counts only (plus exact rational IoU sums for
the segment-quality statistics), so ingestion order, merge order, and thread
count cannot change the finalized report: merge is associative and
commutative, and all floating-point division happens once, at finalize.

Metric summary:

- Semantic quality: per-class voxel IoU over the sequence; the mean skips
  the free class and classes with zero union.
- Association quality: per ground-truth 4D tube g, sum over predicted tubes
  p that overlap it of overlap(p,g) * IoU(p,g), divided by |g|; averaged
  over gt tubes. Tube overlap ignores classes (class errors are charged to
  the semantic term only).
- Combined score: sqrt(semantic * association).
- PQ / PQ*: per-frame per-class segment matching, strict IoU > 0.5 for PQ,
  maximum-weight matching for PQ*; both share the matching-independent
  denominator |TP| + (|FP| + |FN|) / 2.

Only the ground truth's visibility mask gates evaluation; prediction
visibility is ignored.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from fractions import Fraction
from typing import Iterable, Optional, Sequence

import numpy as np

from . import kernels
from .assignment import max_weight_matching, threshold_matching
from .errors import (
    ClassTableMismatch,
    EmptyAccumulator,
    FrameMismatch,
    MissingClassTableEntry,
    SpecMismatch,
    TrackClassConflict,
)
from .grid import ClassTable, PanopticGrid

PQ_MODES = ("threshold", "max_weight")


@dataclass
class _PqCell:
    iou_sum: Fraction = Fraction(0)
    tp: int = 0
    fp: int = 0
    fn: int = 0

    def add(self, other: "_PqCell") -> None:
        self.iou_sum += other.iou_sum
        self.tp += other.tp
        self.fp += other.fp
        self.fn += other.fn

    def value(self) -> Optional[float]:
        denom = Fraction(2 * self.tp + self.fp + self.fn, 2)
        if denom == 0:
            return None
        return float(self.iou_sum / denom)


def _check_classes(grid: PanopticGrid, table: ClassTable, who: str) -> None:
    if grid.classes.size and int(grid.classes.max()) >= len(table):
        bad = int(np.argmax(grid.classes >= len(table)))
        raise MissingClassTableEntry(
            f"{who} voxel {bad}: class id {int(grid.classes[bad])} not in table"
        )


class MetricAccumulator:
    """Mergeable counting state for one or more evaluated frames."""

    def __init__(self, table: ClassTable, modes: Sequence[str] = PQ_MODES):
        for m in modes:
            if m not in PQ_MODES:
                raise ValueError(f"unknown pq mode {m!r}")
        self.table = table
        self.modes = tuple(modes)
        c = len(table)
        self.confusion = np.zeros((c, c), dtype=np.int64)
        self.tube_inter: dict[tuple[int, int], int] = {}
        self.pred_tube_size: dict[int, int] = {}
        self.gt_tube_size: dict[int, int] = {}
        self.gt_class_votes: dict[tuple[int, int], int] = {}
        self.pq_stats: dict[str, dict[int, _PqCell]] = {m: {} for m in self.modes}
        self.frames_seen = 0
        self.voxels_evaluated = 0

    # Derived views matching the documented counting-state fields.
    @property
    def seg_inter(self) -> np.ndarray:
        return np.diag(self.confusion).copy()

    @property
    def seg_gt(self) -> np.ndarray:
        return self.confusion.sum(axis=1)

    @property
    def seg_pred(self) -> np.ndarray:
        return self.confusion.sum(axis=0)

    @property
    def gt_track_class(self) -> dict[int, int]:
        """Majority class per gt track (ties to the smaller class id)."""
        best: dict[int, tuple[int, int]] = {}
        for (gid, cid), n in self.gt_class_votes.items():
            cur = best.get(gid)
            # more votes wins; equal votes prefer the smaller class id
            if cur is None or n > cur[0] or (n == cur[0] and cid < cur[1]):
                best[gid] = (n, cid)
        return {gid: cid for gid, (_, cid) in best.items()}

    def copy(self) -> "MetricAccumulator":
        out = MetricAccumulator(self.table, self.modes)
        out.confusion = self.confusion.copy()
        out.tube_inter = dict(self.tube_inter)
        out.pred_tube_size = dict(self.pred_tube_size)
        out.gt_tube_size = dict(self.gt_tube_size)
        out.gt_class_votes = dict(self.gt_class_votes)
        out.pq_stats = {
            m: {c: replace(cell) for c, cell in cells.items()}
            for m, cells in self.pq_stats.items()
        }
        out.frames_seen = self.frames_seen
        out.voxels_evaluated = self.voxels_evaluated
        return out


@dataclass(frozen=True)
class FrameRow:
    """Per-frame diagnostics for the report CSV."""

    frame_index: int
    voxels_evaluated: int
    pq: Optional[float] = None
    pq_star: Optional[float] = None


def _segment_stats(key: np.ndarray, valid: np.ndarray):
    keys, sizes = np.unique(key[valid], return_counts=True)
    return keys, sizes.astype(np.int64)


def _frame_pq(
    table: ClassTable,
    gt: PanopticGrid,
    pred: PanopticGrid,
    mask: Optional[np.ndarray],
    modes: Sequence[str],
) -> dict[str, dict[int, _PqCell]]:
    """Per-class segment matching statistics for one frame."""
    thing = table.thing_mask()
    gt_thing = thing[gt.classes]
    pred_thing = thing[pred.classes]
    valid_gt = ~gt_thing | (gt.instances != 0)
    valid_pred = ~pred_thing | (pred.instances != 0)
    if mask is not None:
        valid_gt &= mask
        valid_pred &= mask
    gt_key = (gt.classes.astype(np.uint64) << np.uint64(32)) | gt.instances.astype(
        np.uint64
    ) * gt_thing.astype(np.uint64)
    pred_key = (
        pred.classes.astype(np.uint64) << np.uint64(32)
    ) | pred.instances.astype(np.uint64) * pred_thing.astype(np.uint64)
    keys_g, sizes_g = _segment_stats(gt_key, valid_gt)
    keys_p, sizes_p = _segment_stats(pred_key, valid_pred)

    both = valid_gt & valid_pred
    inter: dict[tuple[int, int], int] = {}
    if both.any():
        code_g = np.searchsorted(keys_g, gt_key[both]).astype(np.uint32)
        code_p = np.searchsorted(keys_p, pred_key[both]).astype(np.uint32)
        ig, ip, cnt = kernels.pair_counts(code_g, code_p, None)
        for a, b, n in zip(ig.tolist(), ip.tolist(), cnt.tolist()):
            inter[(a, b)] = n

    class_g = (keys_g >> np.uint64(32)).astype(np.int64)
    class_p = (keys_p >> np.uint64(32)).astype(np.int64)
    out: dict[str, dict[int, _PqCell]] = {m: {} for m in modes}
    for c in sorted(set(class_g.tolist()) | set(class_p.tolist())):
        rows = np.flatnonzero(class_g == c)
        cols = np.flatnonzero(class_p == c)
        iou = np.zeros((rows.size, cols.size), dtype=np.float64)
        pair_fraction: dict[tuple[int, int], Fraction] = {}
        col_of = {int(j): jj for jj, j in enumerate(cols.tolist())}
        row_of = {int(i): ii for ii, i in enumerate(rows.tolist())}
        for (a, b), n in inter.items():
            ii = row_of.get(a)
            jj = col_of.get(b)
            if ii is None or jj is None:
                continue
            union = int(sizes_g[a]) + int(sizes_p[b]) - n
            iou[ii, jj] = n / union
            pair_fraction[(ii, jj)] = Fraction(n, union)
        for m in modes:
            if m == "threshold":
                pairs = threshold_matching(iou)
            else:
                pairs = max_weight_matching(iou, 0.0)
            cell = _PqCell()
            cell.tp = len(pairs)
            cell.fp = int(cols.size) - cell.tp
            cell.fn = int(rows.size) - cell.tp
            cell.iou_sum = sum(
                (pair_fraction[p] for p in pairs), start=Fraction(0)
            )
            out[m][int(c)] = cell
    return out


def ingest_frame(
    acc: MetricAccumulator, gt: PanopticGrid, pred: PanopticGrid
) -> MetricAccumulator:
    """Fold one frame's (gt, pred) pair into the accumulator.

    Counts are restricted to voxels where gt.visibility is set (all voxels
    when gt has no mask); pred.visibility is ignored. Returns acc.
    """
    if gt.spec != pred.spec:
        raise SpecMismatch(f"gt spec {gt.spec} != pred spec {pred.spec}")
    if gt.frame_index != pred.frame_index:
        raise FrameMismatch(
            f"gt frame {gt.frame_index} != pred frame {pred.frame_index}"
        )
    table = acc.table
    _check_classes(gt, table, "gt")
    _check_classes(pred, table, "pred")

    mask = gt.visibility
    c = len(table)
    if mask is None:
        gt_cls = gt.classes.astype(np.int64)
        pred_cls = pred.classes.astype(np.int64)
        nvox = gt.spec.nvox
    else:
        gt_cls = gt.classes[mask].astype(np.int64)
        pred_cls = pred.classes[mask].astype(np.int64)
        nvox = int(mask.sum())
    acc.confusion += np.bincount(
        gt_cls * c + pred_cls, minlength=c * c
    ).reshape(c, c)
    acc.frames_seen += 1
    acc.voxels_evaluated += nvox

    thing = table.thing_mask()
    gt_tube = thing[gt.classes] & (gt.instances != 0)
    pred_tube = thing[pred.classes] & (pred.instances != 0)
    if mask is not None:
        gt_tube &= mask
        pred_tube &= mask

    pids, gids, cnt = kernels.pair_counts(
        pred.instances, gt.instances, gt_tube & pred_tube
    )
    for p, g, n in zip(pids.tolist(), gids.tolist(), cnt.tolist()):
        key = (p, g)
        acc.tube_inter[key] = acc.tube_inter.get(key, 0) + n

    vals, cnts = kernels.value_counts(pred.instances, pred_tube)
    for v, n in zip(vals.tolist(), cnts.tolist()):
        acc.pred_tube_size[v] = acc.pred_tube_size.get(v, 0) + n
    vals, cnts = kernels.value_counts(gt.instances, gt_tube)
    for v, n in zip(vals.tolist(), cnts.tolist()):
        acc.gt_tube_size[v] = acc.gt_tube_size.get(v, 0) + n

    gids2, gcls, cnt2 = kernels.pair_counts(
        gt.instances, gt.classes.astype(np.uint32), gt_tube
    )
    for g, cc, n in zip(gids2.tolist(), gcls.tolist(), cnt2.tolist()):
        key = (g, cc)
        acc.gt_class_votes[key] = acc.gt_class_votes.get(key, 0) + n

    if acc.modes:
        frame_pq = _frame_pq(table, gt, pred, mask, acc.modes)
        for m, cells in frame_pq.items():
            dst = acc.pq_stats[m]
            for cid, cell in cells.items():
                if cid in dst:
                    dst[cid].add(cell)
                else:
                    dst[cid] = cell
    return acc


def merge(a: MetricAccumulator, b: MetricAccumulator) -> MetricAccumulator:
    """Combine two accumulators; associative and commutative."""
    if a.table != b.table:
        raise ClassTableMismatch("accumulators built against different class tables")
    if set(a.modes) != set(b.modes):
        raise ValueError(f"pq mode sets differ: {a.modes} vs {b.modes}")
    cls_a = a.gt_track_class
    cls_b = b.gt_track_class
    for gid in cls_a.keys() & cls_b.keys():
        if cls_a[gid] != cls_b[gid]:
            raise TrackClassConflict(
                f"gt track {gid}: class {cls_a[gid]} vs {cls_b[gid]}"
            )
    out = a.copy()
    out.confusion += b.confusion
    for key, n in b.tube_inter.items():
        out.tube_inter[key] = out.tube_inter.get(key, 0) + n
    for key, n in b.pred_tube_size.items():
        out.pred_tube_size[key] = out.pred_tube_size.get(key, 0) + n
    for key, n in b.gt_tube_size.items():
        out.gt_tube_size[key] = out.gt_tube_size.get(key, 0) + n
    for key, n in b.gt_class_votes.items():
        out.gt_class_votes[key] = out.gt_class_votes.get(key, 0) + n
    for m, cells in b.pq_stats.items():
        dst = out.pq_stats[m]
        for cid, cell in cells.items():
            if cid in dst:
                dst[cid].add(cell)
            else:
                dst[cid] = replace(cell)
    out.frames_seen += b.frames_seen
    out.voxels_evaluated += b.voxels_evaluated
    return out


def merge_all(accs: Iterable[MetricAccumulator]) -> MetricAccumulator:
    it = iter(accs)
    try:
        out = next(it)
    except StopIteration:
        raise ValueError("merge_all needs at least one accumulator") from None
    for acc in it:
        out = merge(out, acc)
    return out


@dataclass(frozen=True)
class MetricReport:
    """Finalized metric values; serializes with stable key order."""

    occ_sq: float
    occ_aq: float
    occ_stq: float
    per_class_iou: dict[str, float]
    free_iou: Optional[float]
    per_gt_track_aq: dict[int, float]
    per_class_aq: dict[str, float]
    pq: Optional[float]
    pq_star: Optional[float]
    pq_per_class: dict[str, float]
    pq_star_per_class: dict[str, float]
    frames: int
    voxels_evaluated: int

    def to_json_dict(self) -> dict:
        return {
            "occ_sq": self.occ_sq,
            "occ_aq": self.occ_aq,
            "occ_stq": self.occ_stq,
            "per_class_iou": self.per_class_iou,
            "free_iou": self.free_iou,
            "per_gt_track_aq": {str(k): v for k, v in self.per_gt_track_aq.items()},
            "per_class_aq": self.per_class_aq,
            "pq": self.pq,
            "pq_star": self.pq_star,
            "pq_per_class": self.pq_per_class,
            "pq_star_per_class": self.pq_star_per_class,
            "frames": self.frames,
            "voxels_evaluated": self.voxels_evaluated,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_json_dict(), sort_keys=True, indent=2) + "\n"


def _mean(values: list[float]) -> Optional[float]:
    if not values:
        return None
    return math.fsum(values) / len(values)


def finalize(acc: MetricAccumulator) -> MetricReport:
    """Compute the report from accumulated counts."""
    if acc.frames_seen < 1:
        raise EmptyAccumulator("no frames ingested")
    table = acc.table
    free = table.free_id

    inter = acc.seg_inter
    union = acc.seg_gt + acc.seg_pred - inter
    per_class_iou: dict[str, float] = {}
    included: list[float] = []
    free_iou = None
    for cid in range(len(table)):
        if union[cid] <= 0:
            continue
        iou = float(inter[cid] / union[cid])
        per_class_iou[table.name_of(cid)] = iou
        if cid == free:
            free_iou = iou
        else:
            included.append(iou)
    occ_sq = math.fsum(included) / len(included) if included else 0.0

    track_class = acc.gt_track_class
    per_gt_track_aq: dict[int, float] = {}
    # group intersections by gt id once; iterate in sorted order for
    # reproducible float summation
    by_gt: dict[int, list[tuple[int, int]]] = {}
    for (p, g), n in acc.tube_inter.items():
        by_gt.setdefault(g, []).append((p, n))
    for g in sorted(acc.gt_tube_size):
        size_g = acc.gt_tube_size[g]
        terms = []
        for p, tpa in sorted(by_gt.get(g, [])):
            union_pg = acc.pred_tube_size[p] + size_g - tpa
            terms.append(tpa * (tpa / union_pg))
        per_gt_track_aq[g] = math.fsum(terms) / size_g if terms else 0.0
    occ_aq = (
        math.fsum(per_gt_track_aq.values()) / len(per_gt_track_aq)
        if per_gt_track_aq
        else 0.0
    )
    occ_stq = math.sqrt(occ_sq * occ_aq)

    by_class: dict[int, list[float]] = {}
    for g, aq in sorted(per_gt_track_aq.items()):
        by_class.setdefault(track_class[g], []).append(aq)
    per_class_aq = {
        table.name_of(cid): math.fsum(vals) / len(vals)
        for cid, vals in sorted(by_class.items())
    }

    def pq_summary(mode: str):
        if mode not in acc.pq_stats:
            return None, {}
        cells = acc.pq_stats[mode]
        per_class = {}
        mean_vals = []
        for cid in sorted(cells):
            v = cells[cid].value()
            if v is None:
                continue
            per_class[table.name_of(cid)] = v
            if cid != free:
                mean_vals.append(v)
        return _mean(mean_vals), per_class

    pq, pq_per_class = pq_summary("threshold")
    pq_star, pq_star_per_class = pq_summary("max_weight")

    return MetricReport(
        occ_sq=occ_sq,
        occ_aq=occ_aq,
        occ_stq=occ_stq,
        per_class_iou=per_class_iou,
        free_iou=free_iou,
        per_gt_track_aq=per_gt_track_aq,
        per_class_aq=per_class_aq,
        pq=pq,
        pq_star=pq_star,
        pq_per_class=pq_per_class,
        pq_star_per_class=pq_star_per_class,
        frames=acc.frames_seen,
        voxels_evaluated=acc.voxels_evaluated,
    )


def pq_frame(
    gt: PanopticGrid, pred: PanopticGrid, mode: str, table: ClassTable
) -> tuple[dict[int, float], Optional[float]]:
    """Single-frame PQ (mode 'threshold') or PQ* (mode 'max_weight').

    Returns (per-class values keyed by class id, mean over present classes
    excluding free).
    """
    if mode not in PQ_MODES:
        raise ValueError(f"unknown pq mode {mode!r}")
    if gt.spec != pred.spec:
        raise SpecMismatch(f"gt spec {gt.spec} != pred spec {pred.spec}")
    _check_classes(gt, table, "gt")
    _check_classes(pred, table, "pred")
    cells = _frame_pq(table, gt, pred, gt.visibility, (mode,))[mode]
    per_class = {}
    mean_vals = []
    for cid in sorted(cells):
        v = cells[cid].value()
        if v is None:
            continue
        per_class[cid] = v
        if cid != table.free_id:
            mean_vals.append(v)
    return per_class, _mean(mean_vals)


def evaluate_pair_stream(
    table: ClassTable,
    pairs: Iterable[tuple[PanopticGrid, PanopticGrid]],
    *,
    modes: Sequence[str] = PQ_MODES,
    visible_only: bool = True,
) -> tuple[MetricAccumulator, list[FrameRow]]:
    """Ingest a stream of (gt, pred) frames; returns (accumulator, csv rows)."""
    acc = MetricAccumulator(table, modes)
    rows: list[FrameRow] = []
    for gt, pred in pairs:
        if not visible_only and gt.visibility is not None:
            gt = replace(gt, visibility=None)
        before = {
            m: {c: replace(cell) for c, cell in acc.pq_stats[m].items()}
            for m in acc.modes
        }
        ingest_frame(acc, gt, pred)
        row_vals: dict[str, Optional[float]] = {}
        for m in acc.modes:
            vals = []
            for cid, cell in acc.pq_stats[m].items():
                prev = before[m].get(cid, _PqCell())
                delta = _PqCell(
                    cell.iou_sum - prev.iou_sum,
                    cell.tp - prev.tp,
                    cell.fp - prev.fp,
                    cell.fn - prev.fn,
                )
                v = delta.value()
                if v is not None and cid != table.free_id:
                    vals.append(v)
            row_vals[m] = _mean(vals)
        rows.append(
            FrameRow(
                frame_index=gt.frame_index,
                voxels_evaluated=(
                    int(gt.visibility.sum())
                    if gt.visibility is not None
                    else gt.spec.nvox
                ),
                pq=row_vals.get("threshold"),
                pq_star=row_vals.get("max_weight"),
            )
        )
    return acc, rows
