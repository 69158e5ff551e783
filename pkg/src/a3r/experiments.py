"""Desk-scale experiment harness: toy training runs and camera sweeps.

The camera sweep mirrors the viewpoint-change protocol: the scene
camera is rotated about the vertical axis through the end-effector
start position, the scene is re-rendered, and the drift of the
encoding vector is measured against the unrotated view.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass

import numpy as np

from .decoders import TrainConfig, train
from .pipeline import EncoderConfig, EncoderPipeline, apply_variant
from .scenes import (INSTRUCTION_BLUE, INSTRUCTION_RED, SceneSpec,
                     make_reach_scene, render, rotate_camera)

SWEEP_ANGLES = (0.4, 1.0, 2.0)


def toy_encoder_config(**overrides) -> EncoderConfig:
    """Small-dimension config for fast desk-scale experiments."""
    base = dict(feature_dim=8, embed_dim=32, key_dim=32, num_points=48,
                backbone_stride=8)
    base.update(overrides)
    return EncoderConfig(**base)


def toy_train_config(**overrides) -> TrainConfig:
    base = dict(lr=3e-3, batch=8, epochs=25, seed=0)
    base.update(overrides)
    return TrainConfig(**base)


def train_variant(dataset, variant: str, enc_cfg: EncoderConfig,
                  train_cfg: TrainConfig, head: str = "nll",
                  pipeline_seed: int = 0):
    """Train one ablation variant; returns (pipeline, TrainResult)."""
    cfg = apply_variant(enc_cfg, variant)
    pipeline = EncoderPipeline(cfg, seed=pipeline_seed)
    result = train(dataset, pipeline, head, train_cfg)
    return pipeline, result


def _rotated_spec(spec: SceneSpec, angle: float) -> SceneSpec:
    pivot = spec.ee_pose.translation
    cameras = list(spec.cameras)
    intr, ext = cameras[0]
    cameras[0] = (intr, rotate_camera(ext, pivot, angle))
    return dataclasses.replace(spec, cameras=cameras)


@dataclass
class SweepResult:
    per_angle: dict          # angle -> mean drift over scenes
    mean_drift: float        # average over angles and scenes
    mean_norm: float         # average |z| of the unrotated encodings


def camera_sweep_drift(pipeline: EncoderPipeline, n_scenes: int = 20,
                       angles=SWEEP_ANGLES, seed: int = 1234,
                       image_size: int = 48) -> SweepResult:
    """Encoding drift under scene-camera rotation, averaged over scenes."""
    from .geometry import Proprioception

    rng = np.random.default_rng(seed)
    drifts = {angle: [] for angle in angles}
    norms = []
    for _ in range(n_scenes):
        spec, _, _ = make_reach_scene(rng, image_size=image_size)
        language = INSTRUCTION_RED if rng.uniform() < 0.5 else INSTRUCTION_BLUE
        proprio = Proprioception(ee_pose=spec.ee_pose, gripper_state=0.5)
        z_ref = pipeline.encode(render(spec), proprio, lang=language).z
        norms.append(float(np.linalg.norm(z_ref)))
        for angle in angles:
            frames = render(_rotated_spec(spec, angle))
            z_rot = pipeline.encode(frames, proprio, lang=language).z
            drifts[angle].append(float(np.linalg.norm(z_rot - z_ref)))
    per_angle = {angle: float(np.mean(vals)) for angle, vals in drifts.items()}
    return SweepResult(per_angle=per_angle,
                       mean_drift=float(np.mean(list(per_angle.values()))),
                       mean_norm=float(np.mean(norms)))


def run_ablation(dataset, variants, seeds, enc_cfg: EncoderConfig,
                 train_cfg: TrainConfig, head: str = "nll",
                 sweep_scenes: int = 8, sweep_seed: int = 1234) -> list[dict]:
    """Train each variant for each seed; returns one row dict per run."""
    rows = []
    for variant in variants:
        for seed in seeds:
            cfg = dataclasses.replace(train_cfg, seed=seed)
            pipeline, result = train_variant(dataset, variant, enc_cfg, cfg,
                                             head=head, pipeline_seed=seed)
            sweep = camera_sweep_drift(pipeline, n_scenes=sweep_scenes,
                                       seed=sweep_seed,
                                       image_size=dataset.image_size)
            row = {
                "variant": variant,
                "seed": seed,
                "final_loss": result.epoch_losses[-1],
                "mean_drift": sweep.mean_drift,
            }
            for angle in sweep.per_angle:
                row[f"drift_{angle}"] = sweep.per_angle[angle]
            rows.append(row)
    return rows
