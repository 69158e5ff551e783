import { mkdtempSync, rmSync } from "node:fs";
import { tmpdir } from "node:os";
import { join } from "node:path";
import { afterAll, describe, expect, it } from "vitest";

import {
  BadMagicError,
  BadRankError,
  BadVersionError,
  Tensor,
  TruncatedPayloadError,
  UnsupportedDTypeError,
  decodeTensor,
  encodeTensor,
  readTensor,
  tensorFrom,
  writeTensor,
} from "../src/tensor.js";

const tempDir = mkdtempSync(join(tmpdir(), "a3r-tensor-test-"));
afterAll(() => rmSync(tempDir, { recursive: true, force: true }));

function randomTensor(shape: number[], dtype: "f32" | "f64", seed = 1): Tensor {
  let state = seed >>> 0;
  const next = () => {
    state = (state * 1664525 + 1013904223) >>> 0;
    return state / 2 ** 32 - 0.5;
  };
  const count = shape.reduce((a, b) => a * b, 1);
  return tensorFrom(shape, Array.from({ length: count }, next), dtype);
}

describe("tensor codec", () => {
  it.each([
    [[4], "f64"],
    [[3, 5], "f64"],
    [[2, 3, 4], "f32"],
  ] as Array<[number[], "f32" | "f64"]>)(
    "round-trips shape %j dtype %s bit-exactly",
    (shape, dtype) => {
      const tensor = randomTensor(shape, dtype);
      const back = decodeTensor(encodeTensor(tensor));
      expect(back.dtype).toBe(dtype);
      expect(back.shape).toEqual(shape);
      expect(Buffer.from(back.data.buffer)).toEqual(
        Buffer.from(tensor.data.buffer),
      );
    },
  );

  it("writes the documented header layout", () => {
    const buf = encodeTensor(tensorFrom([2, 3], new Array(6).fill(0), "f32"));
    expect(buf.toString("ascii", 0, 4)).toBe("A3RT");
    expect(buf.readUInt8(4)).toBe(1); // version
    expect(buf.readUInt8(5)).toBe(0); // f32
    expect(buf.readUInt8(6)).toBe(2); // rank
    expect(buf.readUInt32LE(7)).toBe(2);
    expect(buf.readUInt32LE(11)).toBe(3);
    expect(buf.length).toBe(7 + 8 + 6 * 4);
  });

  it("rejects bad magic", () => {
    const buf = encodeTensor(randomTensor([2], "f64"));
    buf.write("NOPE", 0, "ascii");
    expect(() => decodeTensor(buf)).toThrow(BadMagicError);
  });

  it("rejects unknown versions and dtypes", () => {
    const versioned = encodeTensor(randomTensor([2], "f64"));
    versioned.writeUInt8(9, 4);
    expect(() => decodeTensor(versioned)).toThrow(BadVersionError);
    const typed = encodeTensor(randomTensor([2], "f64"));
    typed.writeUInt8(7, 5);
    expect(() => decodeTensor(typed)).toThrow(UnsupportedDTypeError);
  });

  it("rejects truncated payloads", () => {
    const buf = encodeTensor(randomTensor([8], "f64"));
    expect(() => decodeTensor(buf.subarray(0, buf.length - 3))).toThrow(
      TruncatedPayloadError,
    );
    expect(() => decodeTensor(buf.subarray(0, 5))).toThrow(
      TruncatedPayloadError,
    );
  });

  it("validates shape against data length", () => {
    expect(() => tensorFrom([3], [1, 2])).toThrow();
  });

  it("checks rank on read", () => {
    const path = join(tempDir, "t.a3rt");
    writeTensor(path, randomTensor([2, 2], "f64"));
    expect(() => readTensor(path, 3)).toThrow(BadRankError);
    expect(readTensor(path, 2).shape).toEqual([2, 2]);
  });
});
