"""Streaming evaluation and tracking toolkit for 4D panoptic occupancy.

The pipeline pieces compose left to right: semantic grids plus tracked
boxes become panoptic labels (labels), grids travel as compact binary
files with YAML manifests (io), sequences are scored with mergeable
accumulators (metrics), and instance ids are re-associated over time by
three baseline trackers (trackers). synth fabricates scenes with known
metric values for fixtures and CI.
"""

from . import errors
from .assignment import max_weight_matching, threshold_matching
from .grid import (
    ClassDef,
    ClassTable,
    GridSpec,
    PanopticGrid,
    SemanticGrid,
    TrackedBox,
    apply_pose,
    grid_centers,
    instance_centroid,
    invert_pose,
    validate_pose,
    voxel_indices,
    warp_instances,
    world_to_voxel,
)
from .io import (
    FrameRef,
    SequenceManifest,
    load_boxes,
    load_manifest,
    load_sequence,
    read_grid,
    read_semantic_grid,
    save_boxes,
    save_manifest,
    write_grid,
    write_semantic_grid,
)
from .labels import generate_frame_labels
from .metrics import (
    MetricAccumulator,
    MetricReport,
    evaluate_pair_stream,
    finalize,
    ingest_frame,
    merge,
    merge_all,
    pq_frame,
)
from .trackers import (
    BoxTracker,
    DetectedBox,
    KalmanConfig,
    LifecycleParams,
    LifecycleState,
    OverlapTracker,
    Proposal,
    instances_to_boxes,
    lifecycle_step,
    overlap_associate,
)

__version__ = "0.1.0"

__all__ = [
    "BoxTracker",
    "ClassDef",
    "ClassTable",
    "DetectedBox",
    "FrameRef",
    "GridSpec",
    "KalmanConfig",
    "LifecycleParams",
    "LifecycleState",
    "MetricAccumulator",
    "MetricReport",
    "OverlapTracker",
    "PanopticGrid",
    "Proposal",
    "SemanticGrid",
    "SequenceManifest",
    "TrackedBox",
    "apply_pose",
    "errors",
    "evaluate_pair_stream",
    "finalize",
    "generate_frame_labels",
    "grid_centers",
    "ingest_frame",
    "instance_centroid",
    "instances_to_boxes",
    "invert_pose",
    "lifecycle_step",
    "load_boxes",
    "load_manifest",
    "load_sequence",
    "max_weight_matching",
    "merge",
    "merge_all",
    "overlap_associate",
    "pq_frame",
    "read_grid",
    "read_semantic_grid",
    "save_boxes",
    "save_manifest",
    "threshold_matching",
    "validate_pose",
    "voxel_indices",
    "warp_instances",
    "world_to_voxel",
    "write_grid",
    "write_semantic_grid",
]
