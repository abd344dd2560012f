/** Shared types for the in-memory array API. */

export type ClassRole = "free" | "stuff" | "thing";

/** One row of a class table: dense ids, exactly one free class. */
export interface ClassEntry {
  id: number;
  name: string;
  role: ClassRole;
}

/** Geometry of a dense voxel grid; origin is the min corner in the ego frame. */
export interface GridSpec {
  dims: [number, number, number];
  /** Edge length in metres, scalar or per axis. Stored as f32 on disk. */
  voxelSize: number | [number, number, number];
  origin: [number, number, number];
}

/**
 * Per-voxel labels, either flat in x-major order (voxel (ix, iy, iz) at
 * index ix + nx * (iy + ny * iz)) or nested as arr[ix][iy][iz].
 */
export type LabelArray = Uint16Array | Uint32Array | number[] | number[][][];

/** 0/1 per voxel, same ordering options as labels. */
export type VisibilityArray = Uint8Array | number[] | boolean[] | number[][][];

/** One frame of an array sequence. Instances are omitted for semantic input. */
export interface FrameArrays {
  classes: LabelArray;
  instances?: LabelArray;
  visibility?: VisibilityArray;
  /** Row-major rigid transform, ego frame to world. Defaults to identity. */
  egoPose?: number[][];
  /** Seconds. Defaults to 0. */
  timestamp?: number;
  /** Defaults to the frame's position; if set anywhere, set everywhere. */
  frameIndex?: number;
}

/** An in-memory sequence: geometry, class table, and per-frame label pairs. */
export interface ArraySequenceView {
  spec: GridSpec;
  classes: ClassEntry[];
  frames: FrameArrays[];
  sequenceId?: string;
}

/** One oriented 3D box annotation in the world frame. Sizes are full extents. */
export interface TrackedBox {
  frameIndex: number;
  trackId: number;
  classId: number;
  center: [number, number, number];
  size: [number, number, number];
  /** Radians about +z. */
  yaw: number;
}

/** One scored instance proposal, as the corrupt command emits them. */
export interface Proposal {
  /** Links to the instance labels of the matching frame; null for stuff. */
  instanceId: number | null;
  classId: number;
  /** In [0, 1]. */
  score: number;
  origin: "emerging" | "tracked";
  voxelCount: number;
}

export interface ProposalFrame {
  frameIndex: number;
  proposals: Proposal[];
}

/**
 * A finalized metric report, parsed verbatim from the CLI's report.json:
 * field names follow that document, not local naming conventions.
 */
export interface EvalReport {
  occ_sq: number | null;
  occ_aq: number | null;
  occ_stq: number | null;
  free_iou: number | null;
  per_class_iou: Record<string, number>;
  per_class_aq: Record<string, number>;
  per_gt_track_aq: Record<string, number>;
  pq: number | null;
  pq_star: number | null;
  pq_per_class: Record<string, number>;
  pq_star_per_class: Record<string, number>;
  frames: number;
  voxels_evaluated: number;
}

export type MetricName = "occstq" | "pq" | "pqstar";

export type TrackMethod = "overlap" | "ab3dmot" | "lifecycle";

/** Options shared by every binding that shells out to the core. */
export interface RunOptions {
  /** Path to the occ4d executable; defaults to $OCC4D_BIN, then PATH. */
  bin?: string;
  /** Keep the staging directory instead of deleting it (debugging aid). */
  keepTemp?: boolean;
}

export interface EvalOptions extends RunOptions {
  /** Defaults to all three metric families. */
  metrics?: MetricName[];
  /** Restrict scoring to gt-visible voxels. Defaults to true. */
  visibleOnly?: boolean;
  threads?: number;
}

export interface TrackOptions extends RunOptions {
  /** Method config mapping, passed through to the tracker. */
  config?: Record<string, unknown>;
  /** Scored proposal stream; required for method "lifecycle". */
  proposals?: ProposalFrame[];
}

export interface TrackResult {
  /** Relabeled instance ids, one flat x-major array per frame. */
  instances: Uint32Array[];
  tracks: number;
  births: number;
  deaths: number;
}
