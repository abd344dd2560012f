import { describe, expect, it } from "vitest";

import {
  InternalError,
  MissingDataError,
  MissingScoresError,
  ValidationError,
  ViewError,
  evaluate_arrays,
  generate_labels,
  track_arrays,
  type ArraySequenceView,
  type ClassEntry,
  type TrackedBox,
} from "../src/index.js";

const TABLE: ClassEntry[] = [
  { id: 0, name: "free", role: "free" },
  { id: 1, name: "ground", role: "stuff" },
  { id: 2, name: "vehicle", role: "thing" },
];

const DIMS: [number, number, number] = [4, 4, 2];
const N = DIMS[0] * DIMS[1] * DIMS[2];
const BLOCK = [
  [1, 1],
  [1, 2],
  [2, 1],
  [2, 2],
] as const;

function at(ix: number, iy: number, iz: number): number {
  return ix + DIMS[0] * (iy + DIMS[1] * iz);
}

/** Ground layer at iz 0, one 2x2 vehicle block at iz 1. */
function makeFrame(instanceId: number): { classes: Uint16Array; instances: Uint32Array } {
  const classes = new Uint16Array(N);
  const instances = new Uint32Array(N);
  for (let iy = 0; iy < DIMS[1]; iy++) {
    for (let ix = 0; ix < DIMS[0]; ix++) classes[at(ix, iy, 0)] = 1;
  }
  for (const [ix, iy] of BLOCK) {
    classes[at(ix, iy, 1)] = 2;
    instances[at(ix, iy, 1)] = instanceId;
  }
  return { classes, instances };
}

function staticView(frames: number, instanceId: (frame: number) => number): ArraySequenceView {
  return {
    spec: { dims: DIMS, voxelSize: 0.5, origin: [-1, -1, 0] },
    classes: TABLE,
    frames: Array.from({ length: frames }, (_, f) => makeFrame(instanceId(f))),
  };
}

function distinctNonzero(arrays: Uint32Array[]): number {
  const seen = new Set<number>();
  for (const arr of arrays) for (const v of arr) if (v !== 0) seen.add(v);
  return seen.size;
}

describe("evaluate_arrays", () => {
  it("scores identical views as perfect on every metric", () => {
    const view = staticView(3, () => 7);
    const report = evaluate_arrays(view, view);
    expect(report.occ_sq).toBe(1);
    expect(report.occ_aq).toBe(1);
    expect(report.occ_stq).toBe(1);
    expect(report.pq).toBe(1);
    expect(report.pq_star).toBe(1);
    expect(report.free_iou).toBe(1);
    expect(report.frames).toBe(3);
    expect(report.voxels_evaluated).toBe(3 * N);
  });

  it("halves association quality on a midpoint id switch", () => {
    const gt = staticView(4, () => 7);
    const pred = staticView(4, (f) => (f < 2 ? 1 : 2));
    const report = evaluate_arrays(gt, pred);
    expect(report.occ_sq).toBe(1);
    expect(Math.abs((report.occ_aq as number) - 0.5)).toBeLessThanOrEqual(1e-9);
    expect(Math.abs((report.occ_stq as number) - Math.sqrt(0.5))).toBeLessThanOrEqual(1e-9);
  });

  it("honors the metric subset and leaves the rest null", () => {
    const view = staticView(2, () => 7);
    const report = evaluate_arrays(view, view, { metrics: ["pq"] });
    expect(report.pq).toBe(1);
    expect(report.pq_star).toBeNull();
  });

  it("accepts a thread count without changing the numbers", () => {
    const view = staticView(3, () => 7);
    expect(evaluate_arrays(view, view, { threads: 2 })).toEqual(evaluate_arrays(view, view));
  });

  it("gates scoring on gt visibility unless told otherwise", () => {
    const gt = staticView(2, () => 7);
    const pred = staticView(2, () => 7);
    const flipped = at(0, 3, 0);
    for (const frame of pred.frames) {
      (frame.classes as Uint16Array)[flipped] = 0;
    }
    const vis = new Uint8Array(N).fill(1);
    vis[flipped] = 0;
    for (const frame of gt.frames) frame.visibility = vis;

    expect(evaluate_arrays(gt, pred).occ_sq).toBe(1);
    const full = evaluate_arrays(gt, pred, { visibleOnly: false });
    expect(full.occ_sq as number).toBeLessThan(1);
  });

  it("rejects mismatched class tables through the core", () => {
    const gt = staticView(2, () => 7);
    const pred = staticView(2, () => 7);
    pred.classes = TABLE.map((e) => (e.id === 2 ? { ...e, name: "car" } : e));
    let caught: unknown;
    try {
      evaluate_arrays(gt, pred);
    } catch (err) {
      caught = err;
    }
    expect(caught).toBeInstanceOf(ValidationError);
    expect((caught as ValidationError).exitCode).toBe(2);
    expect(String(caught)).toMatch(/ClassTableMismatch/);
  });

  it("rejects disagreeing frame sets through the core", () => {
    const gt = staticView(2, () => 7);
    const pred = staticView(2, () => 7);
    pred.frames = pred.frames.map((f, i) => ({ ...f, frameIndex: i === 1 ? 2 : 0 }));
    let caught: unknown;
    try {
      evaluate_arrays(gt, pred);
    } catch (err) {
      caught = err;
    }
    expect(caught).toBeInstanceOf(MissingDataError);
    expect((caught as MissingDataError).exitCode).toBe(3);
    expect(String(caught)).toMatch(/unmatched indices/);
  });

  it("reports a missing executable plainly", () => {
    const view = staticView(1, () => 7);
    expect(() => evaluate_arrays(view, view, { bin: "/nonexistent/occ4d" })).toThrow(
      InternalError,
    );
    expect(() => evaluate_arrays(view, view, { bin: "/nonexistent/occ4d" })).toThrow(
      /not found/,
    );
  });
});

describe("view validation", () => {
  function nested(fill: number): number[][][] {
    return Array.from({ length: DIMS[0] }, () =>
      Array.from({ length: DIMS[1] }, () => Array.from({ length: DIMS[2] }, () => fill)),
    );
  }

  it("names the frame with an nx mismatch", () => {
    const view = staticView(3, () => 7);
    view.frames[2]!.classes = nested(0).slice(0, 3);
    expect(() => evaluate_arrays(view, view)).toThrow(ViewError);
    expect(() => evaluate_arrays(view, view)).toThrow(
      /frames\[2\]: classes: nx 3 does not match grid nx 4/,
    );
  });

  it("names the frame with a flat length mismatch", () => {
    const view = staticView(2, () => 7);
    view.frames[1]!.instances = new Uint32Array(N - 1);
    expect(() => evaluate_arrays(view, view)).toThrow(/frames\[1\]: instances: has 31 voxels/);
  });

  it("refuses values outside the stored label width", () => {
    const view = staticView(1, () => 7);
    const wide = Array.from(view.frames[0]!.classes as Uint16Array, (v) => v);
    wide[0] = 70000;
    view.frames[0]!.classes = wide;
    expect(() => evaluate_arrays(view, view)).toThrow(/outside u16 range/);
  });

  it("requires instance arrays for panoptic input", () => {
    const view = staticView(1, () => 7);
    delete view.frames[0]!.instances;
    expect(() => evaluate_arrays(view, view)).toThrow(/frames\[0\]: instances are required/);
  });

  it("accepts nested arrays as a full frame encoding", () => {
    const flat = staticView(1, () => 7);
    const [nx, ny, nz] = DIMS;
    const toNested = (arr: ArrayLike<number>): number[][][] =>
      Array.from({ length: nx }, (_, ix) =>
        Array.from({ length: ny }, (_, iy) =>
          Array.from({ length: nz }, (_, iz) => arr[at(ix, iy, iz)] as number),
        ),
      );
    const view: ArraySequenceView = {
      ...flat,
      frames: [
        {
          classes: toNested(flat.frames[0]!.classes as Uint16Array),
          instances: toNested(flat.frames[0]!.instances as Uint32Array),
        },
      ],
    };
    const report = evaluate_arrays(view, flat);
    expect(report.occ_stq).toBe(1);
  });
});

describe("track_arrays", () => {
  it("keeps ids constant across frames of a static scene", () => {
    const result = track_arrays(staticView(3, () => 5), "overlap");
    expect(result.tracks).toBe(1);
    expect(result.instances).toHaveLength(3);
    expect(result.instances[1]).toEqual(result.instances[0]);
    expect(result.instances[2]).toEqual(result.instances[0]);
    expect(distinctNonzero(result.instances)).toBe(1);
  });

  it("merges fresh per-frame ids into strictly fewer tracks", () => {
    const view = staticView(3, (f) => 1 + 10 * f);
    const before = distinctNonzero(
      view.frames.map((f) => f.instances as Uint32Array),
    );
    const result = track_arrays(view, "overlap");
    expect(distinctNonzero(result.instances)).toBeLessThan(before);
  });

  it("requires proposals for lifecycle tracking", () => {
    let caught: unknown;
    try {
      track_arrays(staticView(2, () => 5), "lifecycle");
    } catch (err) {
      caught = err;
    }
    expect(caught).toBeInstanceOf(MissingScoresError);
    expect((caught as MissingScoresError).exitCode).toBe(4);
  });

  it("passes config through to the core's validation", () => {
    expect(() =>
      track_arrays(staticView(2, () => 5), "ab3dmot", { config: { warp: 1 } }),
    ).toThrow(ValidationError);
  });
});

describe("generate_labels", () => {
  const spec = { dims: DIMS, voxelSize: 1, origin: [0, 0, 0] as [number, number, number] };

  function semanticView(frames: number): ArraySequenceView {
    const classes = new Uint16Array(N);
    for (let iy = 0; iy < DIMS[1]; iy++) {
      for (let ix = 0; ix < DIMS[0]; ix++) classes[at(ix, iy, 0)] = 1;
    }
    // Vehicle voxels exactly in the [0,2) cube the test box covers.
    for (const [ix, iy, iz] of [
      [0, 0, 0],
      [1, 0, 0],
      [0, 1, 1],
      [1, 1, 1],
    ]) {
      classes[at(ix!, iy!, iz!)] = 2;
    }
    return {
      spec,
      classes: TABLE,
      frames: Array.from({ length: frames }, () => ({ classes })),
    };
  }

  const boxes: TrackedBox[] = [0, 1].map((frameIndex) => ({
    frameIndex,
    trackId: 3,
    classId: 2,
    center: [1, 1, 1],
    size: [2, 2, 2],
    yaw: 0,
  }));

  it("labels thing voxels with the covering box's track id", () => {
    const sem = semanticView(2);
    const labeled = generate_labels(sem, boxes);
    expect(labeled.frames).toHaveLength(2);
    for (let f = 0; f < 2; f++) {
      const classes = labeled.frames[f]!.classes as Uint16Array;
      const instances = labeled.frames[f]!.instances as Uint32Array;
      expect(classes).toEqual(sem.frames[f]!.classes);
      for (let i = 0; i < N; i++) {
        expect(instances[i]).toBe(classes[i] === 2 ? 3 : 0);
      }
    }
  });

  it("produces views that evaluate as perfect against themselves", () => {
    const labeled = generate_labels(semanticView(2), boxes);
    expect(evaluate_arrays(labeled, labeled).occ_stq).toBe(1);
  });

  it("rejects instance arrays on semantic input", () => {
    const sem = semanticView(1);
    sem.frames[0]!.instances = new Uint32Array(N);
    expect(() => generate_labels(sem, boxes)).toThrow(/instances are not allowed/);
  });
});
