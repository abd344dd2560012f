/**
 * In-process bindings for pipelines that hold occupancy grids as numeric
 * arrays. Each call stages its inputs as a sequence tree in a private
 * temp directory, drives the occ4d CLI over it, and reads the results
 * back, so the numbers are the CLI's own; no metric logic lives here.
 */

import { readFileSync, writeFileSync } from "node:fs";
import { join } from "node:path";
import { stringify as stringifyYaml } from "yaml";

import { InternalError } from "./errors.js";
import { runCli, withStagingDir } from "./runner.js";
import {
  normalizeView,
  readSequenceTree,
  writeProposalsFile,
  writeSequenceTree,
} from "./sequence.js";
import type {
  ArraySequenceView,
  EvalOptions,
  EvalReport,
  TrackMethod,
  TrackOptions,
  TrackResult,
  RunOptions,
  TrackedBox,
} from "./types.js";

export * from "./types.js";
export * from "./errors.js";
export {
  FLAG_SEMANTIC_ONLY,
  FLAG_VISIBILITY,
  decodeGrid,
  encodeGrid,
  voxelCount,
  voxelSizeTriple,
  type DecodedGrid,
  type EncodeInput,
} from "./gridfile.js";
export {
  identityPose,
  normalizeView,
  readBoxesFile,
  readSequenceTree,
  writeBoxesFile,
  writeProposalsFile,
  writeSequenceTree,
  type NormalizedFrame,
  type NormalizedView,
  type SequenceTree,
} from "./sequence.js";

function counter(stdout: string, key: string): number {
  const m = new RegExp(`^${key}: (\\d+)$`, "m").exec(stdout);
  if (m === null) {
    throw new InternalError(`occ4d did not report '${key}'`, -1, "");
  }
  return Number(m[1]);
}

/**
 * Score a predicted sequence against ground truth, both given as
 * in-memory views. Returns the same report the eval command writes, to
 * full precision.
 */
export function evaluate_arrays(
  gt: ArraySequenceView,
  pred: ArraySequenceView,
  options: EvalOptions = {},
): EvalReport {
  const gtNorm = normalizeView(gt, { instances: "required" });
  const predNorm = normalizeView(pred, { instances: "required" });
  return withStagingDir(options, (dir) => {
    const gtDir = join(dir, "gt");
    const predDir = join(dir, "pred");
    writeSequenceTree(gtDir, gtNorm);
    writeSequenceTree(predDir, predNorm);
    const reportPath = join(dir, "report.json");
    const args = [
      "eval",
      "--gt",
      join(gtDir, "manifest.yaml"),
      "--pred",
      join(predDir, "manifest.yaml"),
      "--out",
      reportPath,
    ];
    if (options.metrics !== undefined) {
      args.push("--metrics", options.metrics.join(","));
    }
    if (options.visibleOnly === false) {
      args.push("--no-visible-only");
    }
    if (options.threads !== undefined) {
      args.push("--threads", String(options.threads));
    }
    runCli(args, options);
    return JSON.parse(readFileSync(reportPath, "utf8")) as EvalReport;
  });
}

/**
 * Re-assign instance ids over time with the chosen association method.
 * Returns one relabeled instance array per frame plus the track ledger
 * counters the track command reports.
 */
export function track_arrays(
  pred: ArraySequenceView,
  method: TrackMethod,
  options: TrackOptions = {},
): TrackResult {
  const norm = normalizeView(pred, { instances: "required" });
  return withStagingDir(options, (dir) => {
    const predDir = join(dir, "pred");
    const outDir = join(dir, "out");
    writeSequenceTree(predDir, norm);
    const args = [
      "track",
      "--pred",
      join(predDir, "manifest.yaml"),
      "--method",
      method,
      "--out",
      outDir,
    ];
    if (options.config !== undefined) {
      const configPath = join(dir, "config.yaml");
      writeFileSync(configPath, stringifyYaml(options.config));
      args.push("--config", configPath);
    }
    if (options.proposals !== undefined) {
      const proposalsPath = join(dir, "proposals.json");
      writeProposalsFile(proposalsPath, options.proposals);
      args.push("--proposals", proposalsPath);
    }
    const stdout = runCli(args, options);
    const tree = readSequenceTree(outDir);
    return {
      instances: tree.frames.map((f, i) => {
        if (f.instances === null) {
          throw new InternalError(`track output frame ${i} has no instance labels`, -1, "");
        }
        return f.instances;
      }),
      tracks: counter(stdout, "tracks"),
      births: counter(stdout, "births"),
      deaths: counter(stdout, "deaths"),
    };
  });
}

/**
 * Generate panoptic labels from semantic grids plus tracked boxes.
 * The input view must be semantic (no instance arrays); the returned
 * view carries the generated (class, instance) pairs.
 */
export function generate_labels(
  semantic: ArraySequenceView,
  boxes: TrackedBox[],
  options: RunOptions = {},
): ArraySequenceView {
  const norm = normalizeView(semantic, { instances: "forbidden" });
  return withStagingDir(options, (dir) => {
    const semDir = join(dir, "semantic");
    const outDir = join(dir, "out");
    writeSequenceTree(semDir, norm, { semanticOnly: true, boxes });
    runCli(
      ["gen-labels", "--semantic", join(semDir, "manifest.yaml"), "--out", outDir],
      options,
    );
    return readSequenceTree(outDir).view;
  });
}
