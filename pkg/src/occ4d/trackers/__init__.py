"""Temporal association: overlap warping, box Kalman filtering, and the
score-threshold lifecycle machine."""

from .kalman import (
    BoxTracker,
    DetectedBox,
    KalmanConfig,
    KalmanTrack,
    instances_to_boxes,
    kalman_track_step,
)
from .lifecycle import (
    Decision,
    LifecycleParams,
    LifecycleState,
    Proposal,
    lifecycle_step,
)
from .overlap import OverlapTracker, overlap_associate

__all__ = [
    "BoxTracker",
    "DetectedBox",
    "Decision",
    "KalmanConfig",
    "KalmanTrack",
    "LifecycleParams",
    "LifecycleState",
    "OverlapTracker",
    "Proposal",
    "instances_to_boxes",
    "kalman_track_step",
    "lifecycle_step",
    "overlap_associate",
]
