/**
 * Binary codec for `*.occ` grid files.
 *
 * Layout (all little-endian): 8-byte magic "OCC4DPG1"; nx, ny, nz as u32;
 * voxel size and origin as three f32 each; u32 flags; then u16 classes,
 * u32 instances (omitted when flag bit 1 is set), and an LSB-first
 * visibility bitset when flag bit 0 is set. Voxel (ix, iy, iz) lives at
 * flat index ix + nx * (iy + ny * iz). Equal grids encode to equal bytes.
 */

import { BadMagic, GridCodecError, TrailingBytes, TruncatedPayload } from "./errors.js";
import type { GridSpec } from "./types.js";

export const FLAG_VISIBILITY = 1 << 0;
export const FLAG_SEMANTIC_ONLY = 1 << 1;

const MAGIC = "OCC4DPG1";
const HEADER_SIZE = MAGIC.length + 3 * 4 + 3 * 4 + 3 * 4 + 4;

const HOST_LE = new Uint8Array(new Uint16Array([1]).buffer)[0] === 1;

/** Voxel size as a per-axis triple, whether given as scalar or triple. */
export function voxelSizeTriple(spec: GridSpec): [number, number, number] {
  const v = spec.voxelSize;
  return typeof v === "number" ? [v, v, v] : [v[0], v[1], v[2]];
}

export function voxelCount(spec: GridSpec): number {
  return spec.dims[0] * spec.dims[1] * spec.dims[2];
}

function checkGeometry(spec: GridSpec, where: string): void {
  const size = voxelSizeTriple(spec);
  if (spec.dims.some((d) => !Number.isInteger(d) || d < 1)) {
    throw new GridCodecError(`${where}: dims must be >= 1, got [${spec.dims}]`);
  }
  if (size.some((s) => !Number.isFinite(s) || !(s > 0))) {
    throw new GridCodecError(`${where}: voxel_size must be > 0, got [${size}]`);
  }
  if (spec.origin.some((o) => !Number.isFinite(o))) {
    throw new GridCodecError(`${where}: origin must be finite, got [${spec.origin}]`);
  }
}

export interface EncodeInput {
  spec: GridSpec;
  classes: Uint16Array;
  /** null writes a semantic-only file (flag bit 1). */
  instances: Uint32Array | null;
  /** 0/1 per voxel; null omits the bitset. */
  visibility: Uint8Array | null;
}

export interface DecodedGrid {
  spec: GridSpec;
  classes: Uint16Array;
  instances: Uint32Array | null;
  visibility: Uint8Array | null;
  semanticOnly: boolean;
}

function copyPayload(out: Uint8Array, offset: number, src: Uint16Array | Uint32Array): void {
  if (HOST_LE) {
    out.set(new Uint8Array(src.buffer, src.byteOffset, src.byteLength), offset);
    return;
  }
  const dv = new DataView(out.buffer, out.byteOffset);
  const wide = src.BYTES_PER_ELEMENT === 4;
  for (let i = 0; i < src.length; i++) {
    const v = src[i] as number;
    if (wide) dv.setUint32(offset + 4 * i, v, true);
    else dv.setUint16(offset + 2 * i, v, true);
  }
}

export function encodeGrid(input: EncodeInput): Uint8Array {
  const { spec, classes, instances, visibility } = input;
  checkGeometry(spec, "encode");
  const n = voxelCount(spec);
  if (classes.length !== n) {
    throw new GridCodecError(`encode: classes has ${classes.length} voxels, grid expects ${n}`);
  }
  if (instances !== null && instances.length !== n) {
    throw new GridCodecError(`encode: instances has ${instances.length} voxels, grid expects ${n}`);
  }
  if (visibility !== null && visibility.length !== n) {
    throw new GridCodecError(`encode: visibility has ${visibility.length} voxels, grid expects ${n}`);
  }

  let flags = 0;
  if (visibility !== null) flags |= FLAG_VISIBILITY;
  if (instances === null) flags |= FLAG_SEMANTIC_ONLY;
  const visBytes = visibility !== null ? (n + 7) >> 3 : 0;
  const total = HEADER_SIZE + 2 * n + (instances !== null ? 4 * n : 0) + visBytes;

  const out = new Uint8Array(total);
  const dv = new DataView(out.buffer);
  for (let i = 0; i < MAGIC.length; i++) out[i] = MAGIC.charCodeAt(i);
  let off = MAGIC.length;
  for (const d of spec.dims) {
    dv.setUint32(off, d, true);
    off += 4;
  }
  for (const s of voxelSizeTriple(spec)) {
    dv.setFloat32(off, s, true);
    off += 4;
  }
  for (const o of spec.origin) {
    dv.setFloat32(off, o, true);
    off += 4;
  }
  dv.setUint32(off, flags, true);
  off += 4;

  copyPayload(out, off, classes);
  off += 2 * n;
  if (instances !== null) {
    copyPayload(out, off, instances);
    off += 4 * n;
  }
  if (visibility !== null) {
    for (let k = 0; k < n; k++) {
      if (visibility[k]) {
        const byte = off + (k >> 3);
        out[byte] = (out[byte] ?? 0) | (1 << (k & 7));
      }
    }
  }
  return out;
}

function readPayload(
  buf: Uint8Array,
  offset: number,
  count: number,
  wide: boolean,
): Uint16Array | Uint32Array {
  const width = wide ? 4 : 2;
  const out = wide ? new Uint32Array(count) : new Uint16Array(count);
  if (HOST_LE) {
    // Blit the bytes into the fresh array's own buffer. Never touch
    // `buf.buffer` directly: pooled Node Buffers share one ArrayBuffer
    // and override slice() to alias subarray(), so only view-relative
    // operations are safe on the input.
    new Uint8Array(out.buffer).set(buf.subarray(offset, offset + width * count));
    return out;
  }
  const dv = new DataView(buf.buffer, buf.byteOffset + offset, width * count);
  for (let i = 0; i < count; i++) {
    out[i] = wide ? dv.getUint32(4 * i, true) : dv.getUint16(2 * i, true);
  }
  return out;
}

export function decodeGrid(buf: Uint8Array, where = "grid"): DecodedGrid {
  for (let i = 0; i < MAGIC.length; i++) {
    if (i >= buf.length || buf[i] !== MAGIC.charCodeAt(i)) {
      throw new BadMagic(`${where}: expected magic "${MAGIC}"`);
    }
  }
  if (buf.length < HEADER_SIZE) {
    throw new TruncatedPayload(`${where}: header truncated`);
  }
  const dv = new DataView(buf.buffer, buf.byteOffset, buf.byteLength);
  let off = MAGIC.length;
  const dims: [number, number, number] = [
    dv.getUint32(off, true),
    dv.getUint32(off + 4, true),
    dv.getUint32(off + 8, true),
  ];
  off += 12;
  const voxelSize: [number, number, number] = [
    dv.getFloat32(off, true),
    dv.getFloat32(off + 4, true),
    dv.getFloat32(off + 8, true),
  ];
  off += 12;
  const origin: [number, number, number] = [
    dv.getFloat32(off, true),
    dv.getFloat32(off + 4, true),
    dv.getFloat32(off + 8, true),
  ];
  off += 12;
  const flags = dv.getUint32(off, true);
  off += 4;
  if ((flags & ~(FLAG_VISIBILITY | FLAG_SEMANTIC_ONLY)) !== 0) {
    throw new GridCodecError(`${where}: unknown flag bits 0x${flags.toString(16)}`);
  }
  const spec: GridSpec = { dims, voxelSize, origin };
  checkGeometry(spec, where);
  const n = voxelCount(spec);
  const semanticOnly = (flags & FLAG_SEMANTIC_ONLY) !== 0;

  const take = (nbytes: number, what: string): number => {
    if (buf.length < off + nbytes) {
      throw new TruncatedPayload(`${where}: ${what} truncated`);
    }
    const at = off;
    off += nbytes;
    return at;
  };

  const classes = readPayload(buf, take(2 * n, "classes"), n, false) as Uint16Array;
  let instances: Uint32Array | null = null;
  if (!semanticOnly) {
    instances = readPayload(buf, take(4 * n, "instances"), n, true) as Uint32Array;
  }
  let visibility: Uint8Array | null = null;
  if (flags & FLAG_VISIBILITY) {
    const at = take((n + 7) >> 3, "visibility");
    visibility = new Uint8Array(n);
    for (let k = 0; k < n; k++) {
      visibility[k] = (buf[at + (k >> 3)]! >> (k & 7)) & 1;
    }
  }
  if (off !== buf.length) {
    throw new TrailingBytes(`${where}: ${buf.length - off} trailing bytes`);
  }
  return { spec, classes, instances, visibility, semanticOnly };
}
