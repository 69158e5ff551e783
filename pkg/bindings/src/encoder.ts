/**
 * BoundEncoder: drive the native observation encoder from scripts.
 *
 * The bindings never re-implement pipeline math; every call round-trips
 * through the native CLI using its wire formats (calibration JSON,
 * binary tensors, checkpoint directories). One handle holds one forward
 * cache: gradients can only be requested for the most recent encode.
 */

import { spawnSync } from "node:child_process";
import { mkdirSync, mkdtempSync, rmSync, writeFileSync } from "node:fs";
import { tmpdir } from "node:os";
import { join } from "node:path";

import { Tensor, readTensor, writeTensor } from "./tensor.js";
import { loadCheckpoint } from "./checkpoint.js";
import { VERSION } from "./version.js";

export class BindingError extends Error {}
/** Bad arguments or configuration (native exit code 1). */
export class UsageError extends BindingError {}
/** Shape or width mismatches (native exit code 2). */
export class DimensionError extends BindingError {}
/** Missing files or malformed payloads (native exit code 3). */
export class IoError extends BindingError {}
/** The handle was closed or has no cached forward pass. */
export class StaleHandleError extends BindingError {}

export interface CameraCalibration {
  fx: number;
  fy: number;
  cx: number;
  cy: number;
  width: number;
  height: number;
  /** Row-major 4x4 camera-to-base transform, 16 numbers. */
  extrinsic: number[];
}

export interface FrameInput {
  /** (H, W, 3) values in [0, 1]. */
  rgb: Tensor;
  /** (H, W) meters; NaN or 0 marks invalid pixels. */
  depth: Tensor;
}

export interface ProprioInput {
  /** Row-major 4x4 end-effector pose in the base frame. */
  eePose: number[];
  /** Gripper opening in [0, 1]. */
  gripper: number;
}

export interface EncodeInputs {
  frames: FrameInput[];
  calibration: CameraCalibration[];
  /** Per-camera (h, w, d) feature volumes; omit to use the built-in
   *  deterministic backbone. */
  features?: Tensor[];
  language: string;
  proprio: ProprioInput;
  /** Encoder configuration overrides, forwarded as the config JSON. */
  config?: Record<string, unknown>;
  /** Parameter initialization seed (ignored when checkpoint is set). */
  seed?: number;
  /** Checkpoint directory to load parameters from. */
  checkpoint?: string;
}

export interface EncodeResult {
  z: Tensor;
  attention: Tensor;
}

export interface BoundEncoderOptions {
  /** Command prefix for the native CLI; defaults to
   *  [A3R_PYTHON or "python3", "-m", "a3r"]. */
  command?: string[];
  /** Keep temp directories for debugging instead of deleting on close. */
  keepTemp?: boolean;
}

function defaultCommand(): string[] {
  return [process.env.A3R_PYTHON ?? "python3", "-m", "a3r"];
}

export class BoundEncoder {
  private readonly command: string[];
  private readonly keepTemp: boolean;
  private workDir: string | null = null;
  private lastEncodeArgs: string[] | null = null;
  private closed = false;

  constructor(options: BoundEncoderOptions = {}) {
    this.command = options.command ?? defaultCommand();
    this.keepTemp = options.keepTemp ?? false;
    const native = this.run(["--version"]).trim();
    if (native !== VERSION) {
      throw new UsageError(
        `native version ${native} does not match bindings version ${VERSION}`,
      );
    }
  }

  /** Native library version (validated against the bindings'). */
  version(): string {
    return VERSION;
  }

  private run(args: string[]): string {
    const [cmd, ...prefix] = this.command;
    const proc = spawnSync(cmd, [...prefix, ...args], { encoding: "utf-8" });
    if (proc.error) {
      throw new IoError(`failed to launch native CLI: ${proc.error.message}`);
    }
    if (proc.status !== 0) {
      const message = (proc.stderr || proc.stdout || "").trim();
      if (proc.status === 2) throw new DimensionError(message);
      if (proc.status === 3) throw new IoError(message);
      throw new UsageError(message || `exit code ${proc.status}`);
    }
    return proc.stdout ?? "";
  }

  private assertLive(): void {
    if (this.closed) {
      throw new StaleHandleError("encoder handle is closed");
    }
  }

  private validate(inputs: EncodeInputs): void {
    if (!inputs.frames.length) {
      throw new UsageError("at least one camera frame is required");
    }
    if (inputs.frames.length !== inputs.calibration.length) {
      throw new DimensionError(
        `frames (${inputs.frames.length}) and calibration ` +
          `(${inputs.calibration.length}) disagree on camera count`,
      );
    }
    inputs.frames.forEach((frame, i) => {
      if (frame.rgb.shape.length !== 3 || frame.rgb.shape[2] !== 3) {
        throw new DimensionError(`frames[${i}].rgb must be (H, W, 3)`);
      }
      if (
        frame.depth.shape.length !== 2 ||
        frame.depth.shape[0] !== frame.rgb.shape[0] ||
        frame.depth.shape[1] !== frame.rgb.shape[1]
      ) {
        throw new DimensionError(
          `frames[${i}].depth must match the rgb image size`,
        );
      }
    });
    inputs.calibration.forEach((cam, i) => {
      if (cam.extrinsic.length !== 16) {
        throw new DimensionError(
          `calibration[${i}].extrinsic must hold 16 numbers`,
        );
      }
    });
    if (inputs.features !== undefined) {
      if (inputs.features.length !== inputs.frames.length) {
        throw new DimensionError("features must list one volume per camera");
      }
      const d = inputs.features[0].shape[2];
      inputs.features.forEach((vol, i) => {
        if (vol.shape.length !== 3) {
          throw new DimensionError(`features[${i}] must be rank 3 (h, w, d)`);
        }
        if (vol.shape[2] !== d) {
          throw new DimensionError(
            `features[${i}] width ${vol.shape[2]} differs from camera 0 width ${d}`,
          );
        }
      });
      const configured = inputs.config?.feature_dim;
      if (typeof configured === "number" && configured !== d) {
        throw new DimensionError(
          `features width ${d} does not match configured feature_dim ${configured}`,
        );
      }
    }
    if (inputs.proprio.eePose.length !== 16) {
      throw new DimensionError("proprio.eePose must hold 16 numbers");
    }
  }

  /** Run one observation through the native pipeline. */
  encode(inputs: EncodeInputs): EncodeResult {
    this.assertLive();
    this.validate(inputs);
    if (this.workDir !== null && !this.keepTemp) {
      rmSync(this.workDir, { recursive: true, force: true });
    }
    this.workDir = mkdtempSync(join(tmpdir(), "a3r-bindings-"));
    const dir = this.workDir;
    const obsDir = join(dir, "obs");
    mkdirSync(obsDir);
    writeFileSync(join(dir, "calib.json"), JSON.stringify(inputs.calibration));
    inputs.frames.forEach((frame, i) => {
      writeTensor(join(obsDir, `cam${i}_rgb.a3rt`), frame.rgb);
      writeTensor(join(obsDir, `cam${i}_depth.a3rt`), frame.depth);
    });
    writeFileSync(
      join(obsDir, "proprio.json"),
      JSON.stringify({ ee_pose: inputs.proprio.eePose, gripper: inputs.proprio.gripper }),
    );
    const args = [
      "encode",
      "--calib", join(dir, "calib.json"),
      "--frames-dir", obsDir,
      "--lang", inputs.language,
      "--out", join(dir, "out"),
      "--seed", String(inputs.seed ?? 0),
    ];
    if (inputs.features) {
      const featDir = join(dir, "features");
      mkdirSync(featDir);
      inputs.features.forEach((vol, i) =>
        writeTensor(join(featDir, `cam${i}.a3rt`), vol),
      );
      args.push("--features-dir", featDir);
    } else {
      args.push("--test-backbone");
    }
    if (inputs.config) {
      writeFileSync(join(dir, "config.json"), JSON.stringify(inputs.config));
      args.push("--config", join(dir, "config.json"));
    }
    if (inputs.checkpoint) {
      args.push("--checkpoint", inputs.checkpoint);
    }
    this.run(args);
    this.lastEncodeArgs = args;
    return {
      z: readTensor(join(dir, "out", "z.a3rt"), 1),
      attention: readTensor(join(dir, "out", "attention.a3rt"), 1),
    };
  }

  /**
   * Gradients of an upstream-weighted loss through the cached forward
   * pass: parameter gradients plus "input.lang" for the language block.
   */
  gradZ(upstream: Tensor): Record<string, Tensor> {
    this.assertLive();
    if (this.workDir === null || this.lastEncodeArgs === null) {
      throw new StaleHandleError("gradZ requires a prior encode on this handle");
    }
    if (upstream.shape.length !== 1) {
      throw new DimensionError("upstream gradient must be a flat vector");
    }
    const upPath = join(this.workDir, "upstream.a3rt");
    writeTensor(upPath, upstream);
    const gradDir = join(this.workDir, "grads");
    this.run([
      ...this.lastEncodeArgs,
      "--upstream-grad", upPath,
      "--grad-out", gradDir,
    ]);
    return loadCheckpoint(gradDir).tensors;
  }

  /** Invalidate the handle and remove its working directory. */
  close(): void {
    if (this.workDir !== null && !this.keepTemp) {
      rmSync(this.workDir, { recursive: true, force: true });
    }
    this.workDir = null;
    this.lastEncodeArgs = null;
    this.closed = true;
  }
}
