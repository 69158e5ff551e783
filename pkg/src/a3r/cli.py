"""Command-line surface: encode, bench, ablate, train, dataset.

Exit codes: 0 success, 1 argument/config parse error, 2 dimension
mismatch, 3 I/O failure. All machine-readable outputs are JSON except
result curves and tables, which are CSV.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
import time
from json import JSONDecodeError
from pathlib import Path

import numpy as np

from . import __version__, tensorio
from .backbone import TestBackbone, load_feature_volume
from .cloud import feature_colors, write_ply
from .decoders import TrainConfig, train
from .errors import ConfigError, DimensionMismatch, FrameError, NonFiniteError
from .experiments import (SWEEP_ANGLES, run_ablation, toy_encoder_config,
                          toy_train_config)
from .geometry import CameraFrame, Proprioception, RigidTransform, load_calibration
from .pipeline import VARIANTS, EncoderConfig, EncoderPipeline, apply_variant
from .scenes import load_dataset, make_reach_task, save_dataset

EXIT_OK = 0
EXIT_PARSE = 1
EXIT_DIMENSION = 2
EXIT_IO = 3

ABLATION_FLAGS = [name for name in VARIANTS if name != "full"]


class CliParseError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise CliParseError(message)


def _load_config(path, preset: str = "reference") -> EncoderConfig:
    base = EncoderConfig() if preset == "reference" else toy_encoder_config()
    if path is None:
        return base
    data = json.loads(Path(path).read_text())
    merged = base.to_dict()
    unknown = set(data) - set(merged)
    if unknown:
        raise ConfigError(f"unknown config fields {sorted(unknown)}")
    merged.update(data)
    return EncoderConfig.from_dict(merged)


def _apply_flag_overrides(cfg: EncoderConfig, args) -> EncoderConfig:
    for name in ABLATION_FLAGS:
        if getattr(args, name.replace("-", "_"), False):
            cfg = apply_variant(cfg, name)
    return cfg


def _add_ablation_flags(parser) -> None:
    for name in ABLATION_FLAGS:
        parser.add_argument(f"--{name}", action="store_true",
                            help=f"enable the {name} ablation")


def _write_manifest(out_dir: Path, config: EncoderConfig, inputs: dict,
                    outputs: dict, timings_us: dict) -> None:
    manifest = {
        "version": __version__,
        "config": config.to_dict(),
        "inputs": inputs,
        "outputs": outputs,
        "timings_us": {k: round(v, 3) for k, v in timings_us.items()},
    }
    (out_dir / "manifest.json").write_text(
        json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def _load_frames(frames_dir: Path, calib) -> tuple[list, Proprioception]:
    frames = []
    for i, (intr, ext) in enumerate(calib):
        rgb = tensorio.load_tensor(frames_dir / f"cam{i}_rgb.a3rt", expected_rank=3)
        depth = tensorio.load_tensor(frames_dir / f"cam{i}_depth.a3rt",
                                     expected_rank=2)
        frames.append(CameraFrame(rgb=rgb, depth=depth, intrinsics=intr,
                                  extrinsic=ext))
    proprio_data = json.loads((frames_dir / "proprio.json").read_text())
    pose = RigidTransform.from_matrix(
        np.asarray(proprio_data["ee_pose"], dtype=np.float64).reshape(4, 4),
        reorthonormalize=True)
    return frames, Proprioception(ee_pose=pose,
                                  gripper_state=float(proprio_data["gripper"]))


def cmd_encode(args) -> int:
    cfg = _apply_flag_overrides(_load_config(args.config), args)
    calib = load_calibration(args.calib)
    frames, proprio = _load_frames(Path(args.frames_dir), calib)
    volumes = None
    if args.features_dir is not None:
        volumes = [load_feature_volume(Path(args.features_dir) / f"cam{i}.a3rt")
                   for i in range(len(frames))]
    elif not args.test_backbone:
        raise ConfigError("provide --features-dir or --test-backbone")

    pipeline = EncoderPipeline(cfg, seed=args.seed, threads=args.threads or 1)
    if args.checkpoint:
        pipeline.store.load(args.checkpoint)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    timings: dict = {}
    cache: dict = {}
    encoding = pipeline.encode(frames, proprio, volumes=volumes, lang=args.lang,
                               cache=cache, timings=timings)
    tensorio.save_tensor(out_dir / "z.a3rt", encoding.z)
    tensorio.save_tensor(out_dir / "attention.a3rt", encoding.attention)
    outputs = {"z": "z.a3rt", "attention": "attention.a3rt"}

    if args.ply:
        # Re-derive the sampled rows so the dump matches the encoding.
        cloud_points, cloud_feats = _sampled_cloud(pipeline, frames, proprio,
                                                   volumes, args.lang)
        if cfg.rgb_features:
            colors = np.clip(cloud_feats * 255.0, 0, 255).astype(np.uint8)
        elif cloud_feats.shape[1] >= 1:
            colors = feature_colors(cloud_feats)
        else:
            colors = np.full((cloud_points.shape[0], 3), 128, dtype=np.uint8)
        write_ply(out_dir / "cloud.ply", cloud_points, colors,
                  attention=encoding.attention)
        outputs["ply"] = "cloud.ply"

    if args.upstream_grad:
        upstream = tensorio.load_tensor(args.upstream_grad, expected_rank=1)
        if upstream.shape[0] != cfg.embed_dim:
            raise DimensionMismatch(
                f"upstream gradient width {upstream.shape[0]} != embed dim "
                f"{cfg.embed_dim}")
        pipeline.store.zero_grads()
        blocks = pipeline.backward(upstream, cache)
        grads = dict(pipeline.store.grads())
        if blocks["lang"] is not None:
            grads["input.lang"] = blocks["lang"]
        grad_dir = Path(args.grad_out) if args.grad_out else out_dir / "grads"
        tensorio.save_named_tensors(grad_dir, grads, __version__)
        outputs["grads"] = str(grad_dir)

    _write_manifest(out_dir, cfg,
                    {"calib": str(args.calib), "frames_dir": str(args.frames_dir),
                     "features_dir": str(args.features_dir or ""),
                     "lang": args.lang, "seed": args.seed},
                    outputs, timings)
    return EXIT_OK


def _sampled_cloud(pipeline, frames, proprio, volumes, lang):
    """Replay the deterministic front of the pipeline up to gather."""
    from . import cloud as cloudmod
    from .geometry import deproject
    from .sampling import farthest_point_sample, gather

    cfg = pipeline.cfg
    vols = pipeline._volumes_for(frames, volumes, None)
    base = cloudmod.fuse(frames, vols, deprojected=[deproject(f) for f in frames])
    base = cloudmod.apply_crops(base, cfg.crop_config())
    ee = cloudmod.apply_crops(cloudmod.to_ee_frame(base, proprio),
                              cfg.crop_config())
    work = ee if cfg.use_eecf else cloudmod.FeatureCloud(
        base.points, base.features, ee.valid, "base")
    idx = farthest_point_sample(work, pipeline.sampler_cfg)
    down = gather(work, idx)
    return down.points, down.features


def cmd_bench(args) -> int:
    from .scenes import default_cameras, make_reach_scene

    if args.config is None:
        cfg = EncoderConfig(dtype="f32")  # throughput path default
    else:
        cfg = _load_config(args.config)
    rng = np.random.default_rng(0)
    spec, _, _ = make_reach_scene(rng, image_size=args.image_size,
                                  cameras=default_cameras(args.image_size))
    from .scenes import render
    frames = render(spec)
    frames = [CameraFrame(rgb=f.rgb.astype(cfg.np_dtype),
                          depth=f.depth.astype(cfg.np_dtype),
                          intrinsics=f.intrinsics, extrinsic=f.extrinsic)
              for f in frames]
    proprio = Proprioception(ee_pose=spec.ee_pose, gripper_state=0.5)
    pipeline = EncoderPipeline(cfg, seed=0, threads=args.threads or 1)
    backbone = TestBackbone(cfg.feature_dim, cfg.backbone_stride,
                            cfg.backbone_seed, cfg.np_dtype)
    volumes = [backbone.extract(f) for f in frames]
    lang = pipeline.backbone.embed_language("benchmark scene")

    def run_once(timings):
        return pipeline.encode(frames, proprio, volumes=volumes, lang=lang,
                               timings=timings)

    def measure():
        run_once({})  # warm-up
        timings: dict = {}
        t0 = time.perf_counter()
        for _ in range(args.n_iters):
            run_once(timings)
        wall = time.perf_counter() - t0
        return timings, wall

    if args.threads is not None:
        from threadpoolctl import threadpool_limits
        with threadpool_limits(limits=args.threads):
            timings, wall = measure()
    else:
        timings, wall = measure()

    per_stage_us = {k: v / args.n_iters for k, v in timings.items()}
    core_stages = ("deproject", "fuse", "crop", "fps", "pe", "pool")
    core_us = sum(per_stage_us[k] for k in core_stages)
    report = {
        "n_iters": args.n_iters,
        "threads": args.threads,
        "p": cfg.num_points,
        "cameras": len(frames),
        "d": cfg.feature_dim,
        "dtype": cfg.dtype,
        "image_size": args.image_size,
        "per_stage_us": {k: round(v, 2) for k, v in per_stage_us.items()},
        "core_us": round(core_us, 2),
        "core_hz": round(1e6 / core_us, 2),
        "wall_us_per_iter": round(wall / args.n_iters * 1e6, 2),
        "total_hz": round(args.n_iters / wall, 2),
    }
    text = json.dumps(report, indent=2) + "\n"
    if args.out:
        Path(args.out).write_text(text)
    sys.stdout.write(text)
    return EXIT_OK


def cmd_ablate(args) -> int:
    dataset = load_dataset(args.dataset)
    variants = args.variants.split(",") if args.variants else list(VARIANTS)
    for name in variants:
        if name not in VARIANTS:
            raise ConfigError(f"unknown variant {name!r}; known: {sorted(VARIANTS)}")
    if "full" not in variants:  # the unablated run anchors every table
        variants.insert(0, "full")
    enc_cfg = _load_config(args.config, preset=args.preset)
    train_cfg = toy_train_config(epochs=args.epochs)
    rows = run_ablation(dataset, variants, list(range(args.seeds)), enc_cfg,
                        train_cfg, head=args.head,
                        sweep_scenes=args.sweep_scenes)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    fields = ["variant", "seed", "final_loss", "mean_drift"] + [
        f"drift_{a}" for a in SWEEP_ANGLES]
    with out.open("w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=fields)
        writer.writeheader()
        writer.writerows(rows)
    sys.stdout.write(f"wrote {len(rows)} rows to {out}\n")
    return EXIT_OK


def cmd_train(args) -> int:
    dataset = load_dataset(args.dataset)
    cfg = _apply_flag_overrides(_load_config(args.config, preset=args.preset), args)
    train_overrides = {}
    if args.train_config:
        train_overrides = json.loads(Path(args.train_config).read_text())
    known = set(TrainConfig().__dataclass_fields__)
    unknown = set(train_overrides) - known
    if unknown:
        raise ConfigError(f"unknown train config fields {sorted(unknown)}")
    if args.epochs is not None:
        train_overrides["epochs"] = args.epochs
    if args.train_seed is not None:
        train_overrides["seed"] = args.train_seed
    train_cfg = toy_train_config(**train_overrides) if args.preset == "toy" \
        else TrainConfig(**train_overrides)

    pipeline = EncoderPipeline(cfg, seed=args.seed)
    t0 = time.perf_counter()
    result = train(dataset, pipeline, args.head, train_cfg)
    elapsed_us = (time.perf_counter() - t0) * 1e6

    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    pipeline.store.save(out_dir / "checkpoint", __version__)
    with (out_dir / "loss.csv").open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "loss", "lr"])
        for epoch, (loss, lr) in enumerate(zip(result.epoch_losses,
                                               result.epoch_lrs)):
            writer.writerow([epoch, f"{loss:.10g}", f"{lr:.10g}"])
    _write_manifest(out_dir, cfg,
                    {"dataset": str(args.dataset), "head": args.head,
                     "train_config": dataclass_dict(train_cfg),
                     "seed": args.seed},
                    {"checkpoint": "checkpoint", "loss_csv": "loss.csv"},
                    {"train": elapsed_us})
    sys.stdout.write(
        f"trained {result.steps} steps; loss {result.epoch_losses[0]:.4f} -> "
        f"{result.epoch_losses[-1]:.4f}\n")
    return EXIT_OK


def dataclass_dict(cfg) -> dict:
    import dataclasses
    return dataclasses.asdict(cfg)


def cmd_dataset(args) -> int:
    dataset = make_reach_task(args.episodes, seed=args.seed,
                              image_size=args.image_size,
                              chunk_length=args.chunk_length)
    save_dataset(dataset, args.out)
    sys.stdout.write(f"wrote {len(dataset)} episodes to {args.out}\n")
    return EXIT_OK


def build_parser() -> _Parser:
    parser = _Parser(prog="a3r", description=__doc__)
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    enc = sub.add_parser("encode", help="encode one observation into z")
    enc.add_argument("--calib", required=True)
    enc.add_argument("--frames-dir", required=True)
    enc.add_argument("--features-dir")
    enc.add_argument("--test-backbone", action="store_true")
    enc.add_argument("--lang", required=True)
    enc.add_argument("--config")
    enc.add_argument("--checkpoint")
    enc.add_argument("--seed", type=int, default=0)
    enc.add_argument("--out", required=True)
    enc.add_argument("--ply", action="store_true")
    enc.add_argument("--threads", type=int, default=_env_threads())
    enc.add_argument("--upstream-grad")
    enc.add_argument("--grad-out")
    _add_ablation_flags(enc)
    enc.set_defaults(func=cmd_encode)

    bench = sub.add_parser("bench", help="measure pipeline throughput")
    bench.add_argument("--config")
    bench.add_argument("--n-iters", type=int, default=50)
    bench.add_argument("--threads", type=int,
                       default=_env_threads())
    bench.add_argument("--image-size", type=int, default=256)
    bench.add_argument("--out")
    bench.set_defaults(func=cmd_bench)

    abl = sub.add_parser("ablate", help="train and sweep the ablation matrix")
    abl.add_argument("--dataset", required=True)
    abl.add_argument("--variants")
    abl.add_argument("--out", required=True)
    abl.add_argument("--seeds", type=int, default=1)
    abl.add_argument("--head", default="nll")
    abl.add_argument("--config")
    abl.add_argument("--preset", choices=["toy", "reference"], default="toy")
    abl.add_argument("--epochs", type=int, default=20)
    abl.add_argument("--sweep-scenes", type=int, default=8)
    abl.set_defaults(func=cmd_ablate)

    tr = sub.add_parser("train", help="train a decoder head on a dataset")
    tr.add_argument("--dataset", required=True)
    tr.add_argument("--head", required=True)
    tr.add_argument("--config")
    tr.add_argument("--train-config")
    tr.add_argument("--preset", choices=["toy", "reference"], default="toy")
    tr.add_argument("--epochs", type=int)
    tr.add_argument("--seed", type=int, default=0)
    tr.add_argument("--train-seed", type=int)
    tr.add_argument("--out", required=True)
    _add_ablation_flags(tr)
    tr.set_defaults(func=cmd_train)

    ds = sub.add_parser("dataset", help="generate a synthetic reach dataset")
    ds.add_argument("--out", required=True)
    ds.add_argument("--episodes", type=int, required=True)
    ds.add_argument("--seed", type=int, default=0)
    ds.add_argument("--image-size", type=int, default=64)
    ds.add_argument("--chunk-length", type=int, default=8)
    ds.set_defaults(func=cmd_dataset)
    return parser


def _env_threads():
    raw = os.environ.get("A3R_THREADS")
    return int(raw) if raw else None


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if getattr(args, "head", None) is not None and args.command in ("train", "ablate"):
            from .decoders import HEADS
            if args.head not in HEADS:
                raise CliParseError(f"unknown head {args.head!r}")
        return args.func(args)
    except (CliParseError, ConfigError) as exc:
        sys.stderr.write(f"error: {exc}\n")
        return EXIT_PARSE
    except (DimensionMismatch, FrameError, NonFiniteError) as exc:
        sys.stderr.write(f"error: {exc}\n")
        return EXIT_DIMENSION
    except (OSError, tensorio.TensorFormatError, JSONDecodeError) as exc:
        sys.stderr.write(f"error: {exc}\n")
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
