/**
 * Binary tensor files shared with the native pipeline.
 *
 * Layout (little-endian):
 *   magic    4 bytes   "A3RT"
 *   version  u8        currently 1
 *   dtype    u8        0 = float32, 1 = float64
 *   rank     u8
 *   dims     rank * u32
 *   payload  row-major values
 */

import { readFileSync, writeFileSync } from "node:fs";

export const MAGIC = "A3RT";
export const FORMAT_VERSION = 1;

export type DType = "f32" | "f64";

export interface Tensor {
  dtype: DType;
  shape: number[];
  /** Row-major values; length must equal the product of `shape`. */
  data: Float32Array | Float64Array;
}

export class TensorFormatError extends Error {}
export class BadMagicError extends TensorFormatError {}
export class BadVersionError extends TensorFormatError {}
export class UnsupportedDTypeError extends TensorFormatError {}
export class BadRankError extends TensorFormatError {}
export class TruncatedPayloadError extends TensorFormatError {}

const LITTLE_ENDIAN = (() => {
  const probe = new Uint8Array(new Uint16Array([1]).buffer);
  return probe[0] === 1;
})();

function assertLittleEndian(): void {
  if (!LITTLE_ENDIAN) {
    throw new TensorFormatError(
      "big-endian platforms are not supported by the tensor codec",
    );
  }
}

function elementCount(shape: number[]): number {
  return shape.reduce((a, b) => a * b, 1);
}

/** Build a tensor from a plain array, validating the element count. */
export function tensorFrom(
  shape: number[],
  values: ArrayLike<number>,
  dtype: DType = "f64",
): Tensor {
  const data =
    dtype === "f32" ? Float32Array.from(values) : Float64Array.from(values);
  if (data.length !== elementCount(shape)) {
    throw new TensorFormatError(
      `${data.length} values do not fill shape [${shape.join(", ")}]`,
    );
  }
  return { dtype, shape: [...shape], data };
}

export function encodeTensor(tensor: Tensor): Buffer {
  assertLittleEndian();
  if (tensor.data.length !== elementCount(tensor.shape)) {
    throw new TensorFormatError("tensor data does not match its shape");
  }
  if (tensor.shape.length > 255) {
    throw new BadRankError("rank does not fit in u8");
  }
  const dtypeCode = tensor.dtype === "f32" ? 0 : 1;
  const header = Buffer.alloc(7 + 4 * tensor.shape.length);
  header.write(MAGIC, 0, "ascii");
  header.writeUInt8(FORMAT_VERSION, 4);
  header.writeUInt8(dtypeCode, 5);
  header.writeUInt8(tensor.shape.length, 6);
  tensor.shape.forEach((dim, i) => header.writeUInt32LE(dim, 7 + 4 * i));
  const payload = Buffer.from(
    tensor.data.buffer,
    tensor.data.byteOffset,
    tensor.data.byteLength,
  );
  return Buffer.concat([header, Buffer.from(payload)]);
}

export function decodeTensor(buf: Buffer): Tensor {
  assertLittleEndian();
  if (buf.length < 7) {
    throw new TruncatedPayloadError("buffer shorter than header");
  }
  if (buf.toString("ascii", 0, 4) !== MAGIC) {
    throw new BadMagicError(`bad magic ${buf.toString("ascii", 0, 4)}`);
  }
  const version = buf.readUInt8(4);
  if (version !== FORMAT_VERSION) {
    throw new BadVersionError(`unsupported format version ${version}`);
  }
  const dtypeCode = buf.readUInt8(5);
  if (dtypeCode !== 0 && dtypeCode !== 1) {
    throw new UnsupportedDTypeError(`unknown dtype code ${dtypeCode}`);
  }
  const rank = buf.readUInt8(6);
  const dimsEnd = 7 + 4 * rank;
  if (buf.length < dimsEnd) {
    throw new TruncatedPayloadError("buffer ends inside the dims block");
  }
  const shape: number[] = [];
  for (let i = 0; i < rank; i++) {
    shape.push(buf.readUInt32LE(7 + 4 * i));
  }
  const count = elementCount(shape);
  const itemSize = dtypeCode === 0 ? 4 : 8;
  if (buf.length < dimsEnd + count * itemSize) {
    throw new TruncatedPayloadError(
      `payload truncated: need ${dimsEnd + count * itemSize} bytes, have ${buf.length}`,
    );
  }
  // Copy out of the Buffer so the typed array owns aligned memory.
  const bytes = new Uint8Array(count * itemSize);
  bytes.set(buf.subarray(dimsEnd, dimsEnd + count * itemSize));
  const data =
    dtypeCode === 0 ? new Float32Array(bytes.buffer) : new Float64Array(bytes.buffer);
  return { dtype: dtypeCode === 0 ? "f32" : "f64", shape, data };
}

export function writeTensor(path: string, tensor: Tensor): void {
  writeFileSync(path, encodeTensor(tensor));
}

export function readTensor(path: string, expectedRank?: number): Tensor {
  const tensor = decodeTensor(readFileSync(path));
  if (expectedRank !== undefined && tensor.shape.length !== expectedRank) {
    throw new BadRankError(
      `${path}: expected rank ${expectedRank}, got ${tensor.shape.length}`,
    );
  }
  return tensor;
}
