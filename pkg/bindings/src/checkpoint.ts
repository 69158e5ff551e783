/**
 * Named-tensor checkpoint directories.
 *
 * A checkpoint is one tensor file per parameter plus a canonical
 * manifest.json (recursively sorted keys, two-space indent, trailing
 * newline). The canonical form makes checkpoints written from either
 * side of the bindings byte-identical when the contents agree.
 */

import { mkdirSync, readFileSync, writeFileSync } from "node:fs";
import { join } from "node:path";

import {
  DType,
  FORMAT_VERSION,
  Tensor,
  TensorFormatError,
  readTensor,
  writeTensor,
} from "./tensor.js";

const DTYPE_NAMES: Record<DType, string> = { f32: "float32", f64: "float64" };

/** JSON.stringify with objects emitted in sorted-key order. */
export function canonicalJson(value: unknown): string {
  return JSON.stringify(sortKeys(value), null, 2) + "\n";
}

function sortKeys(value: unknown): unknown {
  if (Array.isArray(value)) {
    return value.map(sortKeys);
  }
  if (value !== null && typeof value === "object") {
    const out: Record<string, unknown> = {};
    for (const key of Object.keys(value as object).sort()) {
      out[key] = sortKeys((value as Record<string, unknown>)[key]);
    }
    return out;
  }
  return value;
}

export function saveCheckpoint(
  directory: string,
  tensors: Record<string, Tensor>,
  version: string,
): void {
  mkdirSync(directory, { recursive: true });
  const manifest: Record<string, unknown> = {
    format_version: FORMAT_VERSION,
    version,
    tensors: Object.fromEntries(
      Object.keys(tensors)
        .sort()
        .map((name) => {
          const tensor = tensors[name];
          writeTensor(join(directory, `${name}.a3rt`), tensor);
          return [
            name,
            {
              file: `${name}.a3rt`,
              dtype: DTYPE_NAMES[tensor.dtype],
              shape: tensor.shape,
            },
          ];
        }),
    ),
  };
  writeFileSync(join(directory, "manifest.json"), canonicalJson(manifest));
}

export interface Checkpoint {
  tensors: Record<string, Tensor>;
  version: string;
}

export function loadCheckpoint(directory: string): Checkpoint {
  const manifest = JSON.parse(
    readFileSync(join(directory, "manifest.json"), "utf-8"),
  ) as {
    version?: string;
    tensors: Record<string, { file: string; shape: number[] }>;
  };
  const tensors: Record<string, Tensor> = {};
  for (const [name, meta] of Object.entries(manifest.tensors)) {
    const tensor = readTensor(join(directory, meta.file));
    if (JSON.stringify(tensor.shape) !== JSON.stringify(meta.shape)) {
      throw new TensorFormatError(
        `${name}: manifest shape [${meta.shape}] != file shape [${tensor.shape}]`,
      );
    }
    tensors[name] = tensor;
  }
  return { tensors, version: manifest.version ?? "" };
}
