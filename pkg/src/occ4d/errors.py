"""Exception types shared across the package.

Every error raised on a user-facing validation path derives from Occ4dError
so callers (and the CLI exit-code mapping) can catch one base type.
"""


class Occ4dError(Exception):
    """Base class for all package-specific errors."""


class SpecMismatch(Occ4dError):
    """Two grids or accumulators disagree on grid geometry."""


class FrameMismatch(Occ4dError):
    """Frame indices of related inputs do not agree."""


class ClassTableMismatch(Occ4dError):
    """Two components were built against different class tables."""


class SingularPose(Occ4dError):
    """A 4x4 pose whose rotation block is not orthonormal."""


class MissingClassTableEntry(Occ4dError):
    """A grid references a class id absent from the class table."""


class InvariantViolation(Occ4dError):
    """A label array violates the panoptic coherence rules.

    Carries the first offending flat voxel index and a reason string.
    """

    def __init__(self, voxel: int, reason: str):
        self.voxel = int(voxel)
        self.reason = reason
        super().__init__(f"voxel {voxel}: {reason}")


class GridFormatError(Occ4dError):
    """Base for binary grid-file decode failures."""


class BadMagic(GridFormatError):
    """File does not start with the expected magic bytes."""


class TruncatedPayload(GridFormatError):
    """File ends before the header-implied payload does."""


class TrailingBytes(GridFormatError):
    """File continues past the header-implied payload."""


class ManifestError(Occ4dError):
    """A manifest or boxes file failed validation; message carries location."""


class NonFiniteWeight(Occ4dError):
    """A weight matrix contains NaN or infinity."""


class WeightOutOfRange(Occ4dError):
    """A weight lies outside the range its operation permits."""


class TrackClassConflict(Occ4dError):
    """The same ground-truth track id was observed with two classes."""


class EmptyAccumulator(Occ4dError):
    """finalize() called before any frame was ingested."""


class UnknownTrackId(Occ4dError):
    """A tracked proposal references a track id not in the lifecycle state."""


class UnknownTrack(Occ4dError):
    """A noise event references a track id absent from the sequence."""


class ActorOutOfBounds(Occ4dError):
    """A scenario actor leaves the grid margin.

    Carries the frame index and the actor's track id.
    """

    def __init__(self, frame_index: int, track_id: int, detail: str = ""):
        self.frame_index = int(frame_index)
        self.track_id = int(track_id)
        msg = f"actor {track_id} out of bounds at frame {frame_index}"
        if detail:
            msg = f"{msg}: {detail}"
        super().__init__(msg)
