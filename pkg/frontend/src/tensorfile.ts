/**
 * Reader/writer for the engine's binary tensor container ("CALS1"):
 * 5-byte magic, scalar-kind byte (0 = float64), layout byte (0 = first mode
 * fastest), reserved byte, uint32 LE order, uint64 LE extents, then raw
 * little-endian float64 values with the first mode fastest-varying.
 */

import * as fs from "node:fs";
import * as os from "node:os";

const MAGIC = "CALS1";
const HEADER_FIXED = 12; // magic + kind + layout + reserved + uint32 order

export interface Tensor {
  /** Extents, outermost-last; at least two modes. */
  dims: number[];
  /** prod(dims) values, first mode fastest (column-major style). */
  data: Float64Array;
}

export function tensorLength(dims: number[]): number {
  return dims.reduce((a, b) => a * b, 1);
}

export function validateTensor(t: Tensor): void {
  if (t.dims.length < 2) {
    throw new Error(`tensor order must be >= 2, got ${t.dims.length}`);
  }
  if (t.dims.some((d) => !Number.isInteger(d) || d < 1)) {
    throw new Error(`all extents must be positive integers, got ${t.dims}`);
  }
  if (t.data.length !== tensorLength(t.dims)) {
    throw new Error(
      `data length ${t.data.length} != prod(dims) ${tensorLength(t.dims)}`
    );
  }
}

function encode(t: Tensor): Buffer {
  const n = t.dims.length;
  const header = Buffer.alloc(HEADER_FIXED + 8 * n);
  header.write(MAGIC, 0, "ascii");
  header[5] = 0; // float64
  header[6] = 0; // first mode fastest
  header[7] = 0;
  header.writeUInt32LE(n, 8);
  t.dims.forEach((d, i) => header.writeBigUInt64LE(BigInt(d), HEADER_FIXED + 8 * i));
  let payload: Buffer;
  if (os.endianness() === "LE") {
    payload = Buffer.from(t.data.buffer, t.data.byteOffset, t.data.byteLength);
  } else {
    payload = Buffer.alloc(8 * t.data.length);
    const view = new DataView(payload.buffer, payload.byteOffset);
    t.data.forEach((v, i) => view.setFloat64(8 * i, v, true));
  }
  return Buffer.concat([header, payload]);
}

export function writeTensorFile(path: string, t: Tensor): void {
  validateTensor(t);
  fs.writeFileSync(path, encode(t));
}

export function readTensorFile(path: string): Tensor {
  const buf = fs.readFileSync(path);
  if (buf.length < HEADER_FIXED || buf.toString("ascii", 0, 5) !== MAGIC) {
    throw new Error(`${path}: not a CALS1 tensor file`);
  }
  if (buf[5] !== 0) throw new Error(`${path}: unsupported scalar kind ${buf[5]}`);
  if (buf[6] !== 0) throw new Error(`${path}: unsupported layout ${buf[6]}`);
  const n = buf.readUInt32LE(8);
  const dims: number[] = [];
  for (let i = 0; i < n; i++) {
    dims.push(Number(buf.readBigUInt64LE(HEADER_FIXED + 8 * i)));
  }
  const want = tensorLength(dims);
  const start = HEADER_FIXED + 8 * n;
  if (buf.length !== start + 8 * want) {
    throw new Error(
      `${path}: payload is ${buf.length - start} bytes, expected ${8 * want}`
    );
  }
  const data = new Float64Array(want);
  if (os.endianness() === "LE") {
    // The payload offset is not 8-byte aligned; copy bytes instead of
    // viewing them.
    new Uint8Array(data.buffer).set(buf.subarray(start, start + 8 * want));
  } else {
    const view = new DataView(buf.buffer, buf.byteOffset + start);
    for (let i = 0; i < want; i++) data[i] = view.getFloat64(8 * i, true);
  }
  return { dims, data };
}

export interface Matrix {
  rows: number;
  cols: number;
  /** Column-major values, length rows * cols. */
  data: Float64Array;
}

export function readMatrixFile(path: string): Matrix {
  const t = readTensorFile(path);
  if (t.dims.length !== 2) {
    throw new Error(`${path}: expected a matrix, got order ${t.dims.length}`);
  }
  return { rows: t.dims[0], cols: t.dims[1], data: t.data };
}
