"""Score-driven track birth and death over streamed proposals.

Two thresholds with hysteresis: a proposal tagged as emerging must beat
the entrance threshold to spawn a track, and an existing track is killed
only after its score stays below the exit threshold for `patience`
consecutive frames. Stuff proposals never spawn tracks.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

from ..errors import FrameMismatch, UnknownTrackId
from ..grid import ClassTable


@dataclass(frozen=True)
class Proposal:
    """One scored instance observation in a single frame.

    origin is "emerging" for instances not yet bound to a track and
    "tracked" for instances carrying an existing track id.
    """

    frame_index: int
    class_id: int
    score: float
    origin: str
    instance_id: Optional[int] = None
    track_id: Optional[int] = None
    voxel_count: int = 1

    def __post_init__(self):
        if self.origin not in ("emerging", "tracked"):
            raise ValueError(f"origin must be emerging or tracked, got {self.origin!r}")
        if not 0.0 <= self.score <= 1.0:
            raise ValueError(f"score must be in [0, 1], got {self.score}")
        if self.voxel_count < 1:
            raise ValueError("voxel_count must be at least 1")
        if self.origin == "tracked" and self.track_id is None:
            raise ValueError("tracked proposal needs a track_id")


@dataclass(frozen=True)
class LifecycleParams:
    entrance: float = 0.3
    exit: float = 0.25
    patience: int = 3

    def __post_init__(self):
        if not 0.0 <= self.exit <= self.entrance <= 1.0:
            raise ValueError("need 0 <= exit <= entrance <= 1")
        if self.patience < 1:
            raise ValueError("patience must be at least 1")


@dataclass
class _TrackRecord:
    class_id: int
    low_count: int = 0
    last_frame: int = -1


@dataclass(frozen=True)
class Decision:
    """Outcome for one proposal (or for a track absent this frame)."""

    action: str  # spawn | keep | terminate | discard
    track_id: Optional[int]
    proposal: Optional[Proposal]


class LifecycleState:
    """Mutable track registry; ids are never reused after termination."""

    def __init__(self, table: ClassTable, params: Optional[LifecycleParams] = None):
        self.table = table
        self.params = params or LifecycleParams()
        self.next_id = 1
        self.tracks: dict[int, _TrackRecord] = {}

    def _spawn(self, class_id: int, frame_index: int) -> int:
        tid = self.next_id
        self.next_id += 1
        self.tracks[tid] = _TrackRecord(class_id=class_id, last_frame=frame_index)
        return tid

    def active_ids(self) -> list[int]:
        return sorted(self.tracks)


def lifecycle_step(
    state: LifecycleState, proposals: Sequence[Proposal]
) -> tuple[list[Decision], LifecycleState]:
    """Process one frame's proposals; returns a decision per proposal plus
    terminate decisions for tracks that went silent long enough."""
    params = state.params
    table = state.table
    if proposals:
        frame = proposals[0].frame_index
        for p in proposals:
            if p.frame_index != frame:
                raise FrameMismatch(
                    f"proposals mix frames {frame} and {p.frame_index}"
                )
    else:
        frame = None

    decisions: list[Decision] = []
    seen: set[int] = set()
    for p in proposals:
        if p.origin == "emerging":
            if table.role_of(p.class_id) != "thing":
                decisions.append(Decision("discard", None, p))
                continue
            if p.score > params.entrance:
                tid = state._spawn(p.class_id, p.frame_index)
                seen.add(tid)
                decisions.append(Decision("spawn", tid, p))
            else:
                decisions.append(Decision("discard", None, p))
            continue
        # tracked
        rec = state.tracks.get(p.track_id)
        if rec is None:
            raise UnknownTrackId(f"track {p.track_id} is not active")
        seen.add(p.track_id)
        rec.last_frame = p.frame_index
        if p.score >= params.exit:
            rec.low_count = 0
            decisions.append(Decision("keep", p.track_id, p))
        else:
            rec.low_count += 1
            if rec.low_count == params.patience:
                del state.tracks[p.track_id]
                decisions.append(Decision("terminate", p.track_id, p))
            else:
                decisions.append(Decision("keep", p.track_id, p))

    # tracks with no proposal this frame accrue low-score strikes too
    for tid in sorted(set(state.tracks) - seen):
        rec = state.tracks[tid]
        rec.low_count += 1
        if rec.low_count == params.patience:
            del state.tracks[tid]
            decisions.append(Decision("terminate", tid, None))
    return decisions, state
