/**
 * Marshaling between in-memory array views and on-disk sequence trees
 * (frames/NNNNNN.occ files plus a YAML manifest) as the core CLI reads
 * and writes them. Arrays are always copied at this boundary; Node has
 * no way to hand the subprocess a view of the caller's memory.
 */

import { mkdirSync, readFileSync, writeFileSync } from "node:fs";
import { join } from "node:path";
import { parse as parseYaml, stringify as stringifyYaml } from "yaml";

import { ManifestError, ViewError } from "./errors.js";
import { decodeGrid, encodeGrid, voxelCount, voxelSizeTriple } from "./gridfile.js";
import type {
  ArraySequenceView,
  ClassEntry,
  FrameArrays,
  GridSpec,
  LabelArray,
  ProposalFrame,
  TrackedBox,
  VisibilityArray,
} from "./types.js";

const U16_MAX = 0xffff;
const U32_MAX = 0xffffffff;
const AXES = ["nx", "ny", "nz"] as const;

export function identityPose(): number[][] {
  return [
    [1, 0, 0, 0],
    [0, 1, 0, 0],
    [0, 0, 1, 0],
    [0, 0, 0, 1],
  ];
}

export interface NormalizedFrame {
  frameIndex: number;
  timestamp: number;
  egoPose: number[][];
  classes: Uint16Array;
  instances: Uint32Array | null;
  visibility: Uint8Array | null;
}

export interface NormalizedView {
  spec: GridSpec;
  classes: ClassEntry[];
  frames: NormalizedFrame[];
  sequenceId: string;
}

function checkClassTable(classes: ClassEntry[]): void {
  if (!Array.isArray(classes) || classes.length < 1) {
    throw new ViewError("classes: need at least one class");
  }
  let free = 0;
  classes.forEach((e, i) => {
    if (e.id !== i) {
      throw new ViewError(`classes[${i}]: id ${e.id}, ids must be dense 0..${classes.length - 1}`);
    }
    if (typeof e.name !== "string" || e.name.length === 0) {
      throw new ViewError(`classes[${i}]: name must be a non-empty string`);
    }
    if (e.role !== "free" && e.role !== "stuff" && e.role !== "thing") {
      throw new ViewError(`classes[${i}]: role must be free, stuff, or thing`);
    }
    if (e.role === "free") free += 1;
  });
  if (free !== 1) {
    throw new ViewError(`classes: exactly one free class required, found ${free}`);
  }
}

function isNested(arr: LabelArray | VisibilityArray): arr is number[][][] {
  return Array.isArray(arr) && Array.isArray(arr[0]);
}

/** Flatten arr[ix][iy][iz] to x-major order, checking every axis extent. */
function flattenNested(arr: number[][][], spec: GridSpec, where: string): number[] {
  const [nx, ny, nz] = spec.dims;
  if (arr.length !== nx) {
    throw new ViewError(`${where}: nx ${arr.length} does not match grid nx ${nx}`);
  }
  const out = new Array<number>(nx * ny * nz);
  for (let ix = 0; ix < nx; ix++) {
    const plane = arr[ix]!;
    if (!Array.isArray(plane) || plane.length !== ny) {
      throw new ViewError(`${where}[${ix}]: ny ${plane?.length} does not match grid ny ${ny}`);
    }
    for (let iy = 0; iy < ny; iy++) {
      const col = plane[iy]!;
      if (!Array.isArray(col) || col.length !== nz) {
        throw new ViewError(`${where}[${ix}][${iy}]: nz ${col?.length} does not match grid nz ${nz}`);
      }
      for (let iz = 0; iz < nz; iz++) {
        out[ix + nx * (iy + ny * iz)] = Number(col[iz]);
      }
    }
  }
  return out;
}

function coerceLabels(
  arr: LabelArray,
  spec: GridSpec,
  where: string,
  max: number,
): Uint16Array | Uint32Array {
  const n = voxelCount(spec);
  let flat: Uint16Array | Uint32Array | number[];
  if (isNested(arr)) {
    flat = flattenNested(arr, spec, where);
  } else {
    flat = arr as Uint16Array | Uint32Array | number[];
    if (flat.length !== n) {
      throw new ViewError(`${where}: has ${flat.length} voxels, grid expects ${n}`);
    }
  }
  // A Uint16Array is structurally within either range; everything else
  // gets checked so widths are never silently truncated.
  const skipCheck =
    flat instanceof Uint16Array || (max === U32_MAX && flat instanceof Uint32Array);
  if (!skipCheck) {
    for (let i = 0; i < n; i++) {
      const v = flat[i] as number;
      if (!Number.isInteger(v) || v < 0 || v > max) {
        throw new ViewError(`${where}[${i}]: ${v} outside u${max === U16_MAX ? 16 : 32} range`);
      }
    }
  }
  return max === U16_MAX ? Uint16Array.from(flat) : Uint32Array.from(flat);
}

function coerceVisibility(arr: VisibilityArray, spec: GridSpec, where: string): Uint8Array {
  const n = voxelCount(spec);
  let flat: ArrayLike<number | boolean>;
  if (isNested(arr)) {
    flat = flattenNested(arr, spec, where);
  } else {
    flat = arr;
    if (flat.length !== n) {
      throw new ViewError(`${where}: has ${flat.length} voxels, grid expects ${n}`);
    }
  }
  const out = new Uint8Array(n);
  for (let i = 0; i < n; i++) out[i] = flat[i] ? 1 : 0;
  return out;
}

function checkPose(pose: number[][], where: string): number[][] {
  if (!Array.isArray(pose) || pose.length !== 4) {
    throw new ViewError(`${where}: egoPose must be a 4x4 matrix`);
  }
  return pose.map((row, r) => {
    if (!Array.isArray(row) || row.length !== 4) {
      throw new ViewError(`${where}: egoPose row ${r} must have 4 entries`);
    }
    return row.map((v, c) => {
      if (typeof v !== "number" || !Number.isFinite(v)) {
        throw new ViewError(`${where}: egoPose[${r}][${c}] must be a finite number`);
      }
      return v;
    });
  });
}

export interface NormalizeOptions {
  /** "required" for panoptic input, "forbidden" for semantic-only input. */
  instances: "required" | "forbidden";
}

/**
 * Validate a view's geometry, ranges, and frame indexing, copying every
 * frame into canonical typed arrays. Errors name the offending frame.
 */
export function normalizeView(view: ArraySequenceView, opts: NormalizeOptions): NormalizedView {
  checkClassTable(view.classes);
  if (!Array.isArray(view.frames) || view.frames.length < 1) {
    throw new ViewError("frames: need at least one frame");
  }
  // Geometry errors here should point at the view, not a frame.
  encodeCheckSpec(view.spec);

  const explicit = view.frames.filter((f) => f.frameIndex !== undefined).length;
  if (explicit !== 0 && explicit !== view.frames.length) {
    throw new ViewError("frames: frameIndex must be set on every frame or on none");
  }

  const frames: NormalizedFrame[] = view.frames.map((f, i) => {
    const where = `frames[${i}]`;
    const frameIndex = f.frameIndex ?? i;
    if (!Number.isInteger(frameIndex) || frameIndex < 0) {
      throw new ViewError(`${where}: frameIndex must be a non-negative integer`);
    }
    if (opts.instances === "required" && f.instances === undefined) {
      throw new ViewError(`${where}: instances are required for panoptic input`);
    }
    if (opts.instances === "forbidden" && f.instances !== undefined) {
      throw new ViewError(`${where}: instances are not allowed for semantic input`);
    }
    return {
      frameIndex,
      timestamp: f.timestamp ?? 0,
      egoPose: f.egoPose !== undefined ? checkPose(f.egoPose, where) : identityPose(),
      classes: coerceLabels(f.classes, view.spec, `${where}: classes`, U16_MAX) as Uint16Array,
      instances:
        f.instances !== undefined
          ? (coerceLabels(f.instances, view.spec, `${where}: instances`, U32_MAX) as Uint32Array)
          : null,
      visibility:
        f.visibility !== undefined
          ? coerceVisibility(f.visibility, view.spec, `${where}: visibility`)
          : null,
    };
  });
  for (let i = 1; i < frames.length; i++) {
    if (frames[i]!.frameIndex <= frames[i - 1]!.frameIndex) {
      throw new ViewError(`frames[${i}]: frameIndex not increasing`);
    }
  }
  return {
    spec: view.spec,
    classes: view.classes,
    frames,
    sequenceId: view.sequenceId ?? "arrays",
  };
}

function encodeCheckSpec(spec: GridSpec): void {
  if (!Array.isArray(spec.dims) || spec.dims.length !== 3) {
    throw new ViewError(`spec: dims must be three extents, got ${JSON.stringify(spec.dims)}`);
  }
  if (spec.dims.some((d) => !Number.isInteger(d) || d < 1)) {
    throw new ViewError(`spec: dims must be >= 1, got [${spec.dims}]`);
  }
  if (voxelSizeTriple(spec).some((s) => !Number.isFinite(s) || !(s > 0))) {
    throw new ViewError(`spec: voxelSize must be > 0`);
  }
  if (!Array.isArray(spec.origin) || spec.origin.length !== 3 || spec.origin.some((o) => !Number.isFinite(o))) {
    throw new ViewError(`spec: origin must be three finite numbers`);
  }
}

function gridFileName(frameIndex: number): string {
  return `frames/${String(frameIndex).padStart(6, "0")}.occ`;
}

/** Write a normalized view as a sequence tree the CLI can load. */
export function writeSequenceTree(
  dir: string,
  view: NormalizedView,
  opts: { semanticOnly?: boolean; boxes?: TrackedBox[] } = {},
): void {
  mkdirSync(join(dir, "frames"), { recursive: true });
  for (const f of view.frames) {
    const bytes = encodeGrid({
      spec: view.spec,
      classes: f.classes,
      instances: opts.semanticOnly ? null : f.instances,
      visibility: f.visibility,
    });
    writeFileSync(join(dir, gridFileName(f.frameIndex)), bytes);
  }
  const doc: Record<string, unknown> = {
    sequence_id: view.sequenceId,
    classes: view.classes.map((e) => ({ id: e.id, name: e.name, role: e.role })),
    frames: view.frames.map((f) => ({
      frame_index: f.frameIndex,
      grid: gridFileName(f.frameIndex),
      timestamp: f.timestamp,
      ego_pose: f.egoPose,
    })),
  };
  if (opts.boxes !== undefined) {
    writeBoxesFile(join(dir, "boxes.yaml"), opts.boxes);
    doc.boxes = "boxes.yaml";
  }
  writeFileSync(join(dir, "manifest.yaml"), stringifyYaml(doc));
}

export interface SequenceTree {
  view: ArraySequenceView;
  /** Per-frame normalized arrays, aligned with view.frames. */
  frames: NormalizedFrame[];
  semanticOnly: boolean;
  boxesPath: string | null;
}

/** Read a sequence tree written by the CLI (or by writeSequenceTree). */
export function readSequenceTree(dir: string): SequenceTree {
  const manifestPath = join(dir, "manifest.yaml");
  let doc: unknown;
  try {
    doc = parseYaml(readFileSync(manifestPath, "utf8"));
  } catch (err) {
    throw new ManifestError(`${manifestPath}: ${(err as Error).message}`);
  }
  if (typeof doc !== "object" || doc === null || Array.isArray(doc)) {
    throw new ManifestError(`${manifestPath}: manifest must be a mapping`);
  }
  const m = doc as Record<string, unknown>;
  for (const key of ["sequence_id", "classes", "frames"]) {
    if (!(key in m)) throw new ManifestError(`${manifestPath}: missing key '${key}'`);
  }
  const classes = (m.classes as Array<Record<string, unknown>>).map((e) => ({
    id: e.id as number,
    name: e.name as string,
    role: e.role as ClassEntry["role"],
  }));
  checkClassTable(classes);

  const rows = m.frames as Array<Record<string, unknown>>;
  if (!Array.isArray(rows) || rows.length < 1) {
    throw new ManifestError(`${manifestPath}: frames: need at least one frame`);
  }
  let spec: GridSpec | null = null;
  let semanticOnly = false;
  const frames: NormalizedFrame[] = rows.map((row, i) => {
    const rel = String(row.grid);
    const decoded = decodeGrid(readFileSync(join(dir, rel)), rel);
    if (spec === null) {
      spec = decoded.spec;
      semanticOnly = decoded.semanticOnly;
    } else {
      decoded.spec.dims.forEach((d, a) => {
        if (d !== spec!.dims[a]) {
          throw new ManifestError(
            `${manifestPath}: frames[${i}]: ${AXES[a]} ${d} does not match ${AXES[a]} ${spec!.dims[a]}`,
          );
        }
      });
      if (decoded.semanticOnly !== semanticOnly) {
        throw new ManifestError(`${manifestPath}: frames[${i}]: mixed semantic and panoptic grids`);
      }
    }
    return {
      frameIndex: Number(row.frame_index),
      timestamp: Number(row.timestamp ?? 0),
      egoPose: row.ego_pose as number[][],
      classes: decoded.classes,
      instances: decoded.instances,
      visibility: decoded.visibility,
    };
  });

  const view: ArraySequenceView = {
    spec: spec!,
    classes,
    sequenceId: String(m.sequence_id),
    frames: frames.map((f): FrameArrays => {
      const out: FrameArrays = {
        classes: f.classes,
        egoPose: f.egoPose,
        timestamp: f.timestamp,
        frameIndex: f.frameIndex,
      };
      if (f.instances !== null) out.instances = f.instances;
      if (f.visibility !== null) out.visibility = f.visibility;
      return out;
    }),
  };
  return {
    view,
    frames,
    semanticOnly,
    boxesPath: typeof m.boxes === "string" ? join(dir, m.boxes) : null,
  };
}

export function writeBoxesFile(path: string, boxes: TrackedBox[]): void {
  const sorted = [...boxes].sort(
    (a, b) => a.frameIndex - b.frameIndex || a.trackId - b.trackId,
  );
  const doc = {
    boxes: sorted.map((b) => ({
      frame_index: b.frameIndex,
      track_id: b.trackId,
      class_id: b.classId,
      center: [...b.center],
      size: [...b.size],
      yaw: b.yaw,
    })),
  };
  writeFileSync(path, stringifyYaml(doc));
}

export function readBoxesFile(path: string): TrackedBox[] {
  const doc = parseYaml(readFileSync(path, "utf8"));
  if (doc === null) return [];
  if (typeof doc !== "object" || !("boxes" in doc)) {
    throw new ManifestError(`${path}: missing key 'boxes'`);
  }
  const rows = (doc as { boxes: Array<Record<string, unknown>> | null }).boxes;
  if (rows === null) return [];
  return rows.map((row) => ({
    frameIndex: row.frame_index as number,
    trackId: row.track_id as number,
    classId: row.class_id as number,
    center: row.center as [number, number, number],
    size: row.size as [number, number, number],
    yaw: row.yaw as number,
  }));
}

export function writeProposalsFile(path: string, frames: ProposalFrame[]): void {
  const doc = {
    frames: frames.map((f) => ({
      frame_index: f.frameIndex,
      proposals: f.proposals.map((p) => ({
        instance_id: p.instanceId,
        class_id: p.classId,
        score: p.score,
        origin: p.origin,
        voxel_count: p.voxelCount,
      })),
    })),
  };
  writeFileSync(path, JSON.stringify(doc, null, 2) + "\n");
}
