/** Subprocess plumbing: locate the occ4d executable and map its exit codes. */

import { execFileSync } from "node:child_process";
import { mkdtempSync, rmSync } from "node:fs";
import { tmpdir } from "node:os";
import { join } from "node:path";

import {
  CliError,
  InternalError,
  MissingDataError,
  MissingScoresError,
  ValidationError,
} from "./errors.js";
import type { RunOptions } from "./types.js";

export function resolveBin(opts: RunOptions): string {
  return opts.bin ?? process.env.OCC4D_BIN ?? "occ4d";
}

interface ExecError extends Error {
  status?: number | null;
  code?: string;
  stderr?: Buffer | string;
  stdout?: Buffer | string;
}

function text(v: Buffer | string | undefined): string {
  if (v === undefined) return "";
  return typeof v === "string" ? v : v.toString("utf8");
}

/**
 * The CLI reports failures as a final "error: TypeName: message" line
 * (capital-E "Error:" for argument parsing); anything else is passed
 * through whole.
 */
function failureMessage(stderr: string): string {
  const lines = stderr.trimEnd().split("\n");
  for (let i = lines.length - 1; i >= 0; i--) {
    const m = /^[Ee]rror: (.*)$/.exec(lines[i]!);
    if (m) return m[1]!;
  }
  return stderr.trim() || "occ4d failed without diagnostics";
}

export function runCli(args: string[], opts: RunOptions): string {
  const bin = resolveBin(opts);
  try {
    return execFileSync(bin, args, {
      encoding: "utf8",
      stdio: ["ignore", "pipe", "pipe"],
      maxBuffer: 64 * 1024 * 1024,
    });
  } catch (err) {
    const e = err as ExecError;
    if (e.code === "ENOENT") {
      throw new InternalError(
        `occ4d executable not found at '${bin}'; install the core package or set OCC4D_BIN`,
        -1,
        "",
      );
    }
    const stderr = text(e.stderr);
    const message = failureMessage(stderr);
    const status = e.status ?? -1;
    const cls =
      status === 2
        ? ValidationError
        : status === 3
          ? MissingDataError
          : status === 4
            ? MissingScoresError
            : InternalError;
    throw new cls(message, status, stderr);
  }
}

/** Run fn with a private staging directory, deleting it afterwards. */
export function withStagingDir<T>(opts: RunOptions, fn: (dir: string) => T): T {
  const dir = mkdtempSync(join(tmpdir(), "occ4d-"));
  try {
    return fn(dir);
  } finally {
    if (!opts.keepTemp) rmSync(dir, { recursive: true, force: true });
  }
}

export { CliError };
