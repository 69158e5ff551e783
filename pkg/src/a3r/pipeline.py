"""End-to-end observation encoder: config, forward pass, and gradients.

Stage order is fixed by the frames each rule is stated in: fuse in the
base frame, world-box crop there, then the EE transform, then the EE
z crop, then sampling, encoding, and pooling. Every ablation from the
variant table is a configuration flag here.
"""

from __future__ import annotations

import dataclasses
import time
from dataclasses import dataclass

import numpy as np

from . import cloud as cloudmod
from .backbone import FeatureVolume, LanguageEmbedding, TestBackbone
from .cloud import CropConfig, FeatureCloud, apply_crops, to_ee_frame
from .encoder import (AttentionPool, MaxPool, PositionalEncodingConfig,
                      SceneEncoding, assemble_tokens, positional_encode,
                      split_token_grad)
from .errors import ConfigError, DimensionMismatch
from .geometry import CameraFrame, Proprioception, deproject
from .params import ParamStore
from .sampling import SamplerConfig, farthest_point_sample, gather

# Ablation variant names as exposed by the CLI, mapped to config overrides.
VARIANTS = {
    "full": {},
    "no-eecf": {"use_eecf": False},
    "no-ee-crop": {"use_ee_crop": False},
    "no-image-features": {"use_image_features": False, "fps_metric": "position"},
    "rgb-cloud": {"rgb_features": True},
    "no-lang": {"use_language": False},
    "no-pe": {"use_positional_encoding": False},
    "position-fps": {"fps_metric": "position"},
    "no-attention": {"use_attention": False},
}

_DTYPES = {"f32": np.float32, "f64": np.float64}


@dataclass(frozen=True)
class EncoderConfig:
    feature_dim: int = 64          # d, semantic feature channels
    embed_dim: int = 256           # d_e, output embedding width
    key_dim: int = 256             # d_k
    num_points: int = 512          # p
    pe_frequencies: int = 10       # L
    use_eecf: bool = True
    use_ee_crop: bool = True
    ee_zmin: float = 0.0
    crop_mode: str = "tight"
    world_box: tuple | None = None
    use_image_features: bool = True
    rgb_features: bool = False
    use_language: bool = True
    use_positional_encoding: bool = True
    fps_metric: str = "feature"
    fps_seed_index: int = 0
    use_attention: bool = True
    use_proprio: bool = True
    finetune_backbone: bool = False
    backbone_stride: int = 16
    backbone_seed: int = 0
    dtype: str = "f64"

    def __post_init__(self):
        if self.dtype not in _DTYPES:
            raise ConfigError(f"dtype must be one of {sorted(_DTYPES)}")
        if self.rgb_features and not self.use_image_features:
            raise ConfigError("rgb_features requires use_image_features")

    @property
    def np_dtype(self):
        return _DTYPES[self.dtype]

    @property
    def encoded_width(self) -> int:
        return 6 * self.pe_frequencies if self.use_positional_encoding else 3

    @property
    def cloud_feature_dim(self) -> int:
        if not self.use_image_features:
            return 0
        return 3 if self.rgb_features else self.feature_dim

    @property
    def lang_width(self) -> int:
        return self.feature_dim if self.use_language else 0

    @property
    def token_width(self) -> int:
        return self.encoded_width + self.cloud_feature_dim + self.lang_width

    def to_dict(self) -> dict:
        out = dataclasses.asdict(self)
        if out["world_box"] is not None:
            out["world_box"] = [list(map(float, c)) for c in out["world_box"]]
        return out

    @staticmethod
    def from_dict(data: dict) -> "EncoderConfig":
        known = {f.name for f in dataclasses.fields(EncoderConfig)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown config fields {sorted(unknown)}")
        if data.get("world_box") is not None:
            data = dict(data)
            data["world_box"] = (tuple(data["world_box"][0]),
                                 tuple(data["world_box"][1]))
        return EncoderConfig(**data)

    def crop_config(self) -> CropConfig:
        return CropConfig(mode=self.crop_mode, world_box=self.world_box,
                          ee_zmin=self.ee_zmin if self.use_ee_crop else None)


def apply_variant(cfg: EncoderConfig, name: str) -> EncoderConfig:
    if name not in VARIANTS:
        raise ConfigError(f"unknown variant {name!r}; known: {sorted(VARIANTS)}")
    return dataclasses.replace(cfg, **VARIANTS[name])


class EncoderPipeline:
    """Owns the trainable pooling parameters and runs observations through.

    One pipeline per configuration; ``encode`` is read-only on parameters
    so concurrent forward passes are safe, while training mutates the
    store single-writer.
    """

    def __init__(self, cfg: EncoderConfig, seed: int = 0,
                 store: ParamStore | None = None,
                 backbone: TestBackbone | None = None, threads: int = 1):
        self.cfg = cfg
        self.threads = max(1, threads)
        self.store = store if store is not None else ParamStore()
        rng = np.random.default_rng(seed)
        self.backbone = backbone if backbone is not None else TestBackbone(
            cfg.feature_dim, cfg.backbone_stride, cfg.backbone_seed, cfg.np_dtype)
        if cfg.use_attention:
            self.pool = AttentionPool(self.store, cfg.token_width, cfg.key_dim,
                                      cfg.embed_dim, rng, cfg.np_dtype)
        else:
            self.pool = MaxPool(self.store, cfg.token_width, cfg.embed_dim,
                                rng, cfg.np_dtype)
        if cfg.finetune_backbone:
            self.store.register("backbone.w1", self.backbone.w1)
            self.store.register("backbone.w2", self.backbone.w2)
        self.pe_cfg = PositionalEncodingConfig(cfg.pe_frequencies)
        self.sampler_cfg = SamplerConfig(num_points=cfg.num_points,
                                         metric=cfg.fps_metric,
                                         seed_index=cfg.fps_seed_index)

    def _map_cameras(self, fn, frames):
        """Apply a per-camera function, optionally on a thread pool.

        Results come back in camera order either way, so the output is
        identical to the sequential path for any thread count.
        """
        if self.threads == 1 or len(frames) == 1:
            return [fn(f) for f in frames]
        from concurrent.futures import ThreadPoolExecutor
        with ThreadPoolExecutor(max_workers=self.threads) as pool:
            return list(pool.map(fn, frames))

    def language_vector(self, lang) -> np.ndarray:
        if isinstance(lang, str):
            lang = self.backbone.embed_language(lang)
        if isinstance(lang, LanguageEmbedding):
            vec = lang.vector
        else:
            vec = np.asarray(lang)
        if vec.shape != (self.cfg.feature_dim,):
            raise DimensionMismatch(
                f"language vector has width {vec.shape}, expected "
                f"({self.cfg.feature_dim},)"
            )
        return vec.astype(self.cfg.np_dtype)

    def _volumes_for(self, frames, volumes, cache) -> list[FeatureVolume]:
        cfg = self.cfg
        if not cfg.use_image_features or cfg.rgb_features:
            # The feature grid still defines the cloud resolution, so
            # sample the stride grid even when the backbone is ablated.
            out = []
            for frame in frames:
                s = cfg.backbone_stride
                h, w = frame.rgb.shape[0] // s, frame.rgb.shape[1] // s
                rows = cloudmod._nearest_indices(frame.rgb.shape[0], h)
                cols = cloudmod._nearest_indices(frame.rgb.shape[1], w)
                if cfg.rgb_features:
                    out.append(FeatureVolume(frame.rgb[np.ix_(rows, cols)]))
                else:
                    out.append(FeatureVolume(np.zeros((h, w, 0), dtype=cfg.np_dtype)))
            return out
        if volumes is not None:
            for i, vol in enumerate(volumes):
                if vol.dim != cfg.feature_dim:
                    raise DimensionMismatch(
                        f"camera {i}: feature volume d={vol.dim}, configured "
                        f"d={cfg.feature_dim}"
                    )
            return list(volumes)
        want_cache = cache is not None and cfg.finetune_backbone

        def run(frame):
            bb_cache = {} if want_cache else None
            return self.backbone.extract(frame, bb_cache), bb_cache

        results = self._map_cameras(run, frames)
        if want_cache:
            cache["backbone"] = [bb for _, bb in results]
        return [vol for vol, _ in results]

    def encode(self, frames: list[CameraFrame], proprio: Proprioception,
               volumes: list[FeatureVolume] | None = None, lang=None,
               cache: dict | None = None, timings: dict | None = None,
               rng: np.random.Generator | None = None) -> SceneEncoding:
        cfg = self.cfg
        if not frames:
            raise DimensionMismatch("at least one camera frame is required")
        lang_vec = None
        if cfg.use_language:
            if lang is None:
                raise ConfigError("this configuration requires a language input")
            lang_vec = self.language_vector(lang)

        tick = time.perf_counter
        tb = tick()
        vols = self._volumes_for(frames, volumes, cache)
        t0 = tick()
        deprojected = self._map_cameras(deproject, frames)
        t1 = tick()
        base_cloud = cloudmod.fuse(frames, vols, deprojected=deprojected)
        t2 = tick()
        base_cloud = apply_crops(base_cloud, cfg.crop_config())
        ee_cloud = to_ee_frame(base_cloud, proprio)
        ee_cloud = apply_crops(ee_cloud, cfg.crop_config())
        # Positions the encoder consumes; validity is shared either way.
        work_cloud = ee_cloud if cfg.use_eecf else FeatureCloud(
            base_cloud.points, base_cloud.features, ee_cloud.valid, "base")
        t3 = tick()
        indices = farthest_point_sample(work_cloud, self.sampler_cfg, rng=rng)
        down = gather(work_cloud, indices)
        t4 = tick()
        points = down.points.astype(cfg.np_dtype)
        if cfg.use_positional_encoding:
            encoded = positional_encode(points, self.pe_cfg)
        else:
            encoded = points
        t5 = tick()
        features = down.features.astype(cfg.np_dtype) if cfg.cloud_feature_dim else None
        tokens = assemble_tokens(
            encoded, features,
            lang_vec if cfg.use_language else None).astype(cfg.np_dtype, copy=False)
        pool_cache = {} if cache is not None else None
        encoding = self.pool.forward(tokens, pool_cache)
        t6 = tick()

        if cache is not None:
            cache["pool"] = pool_cache
            cache["indices"] = indices
            cache["grid_shapes"] = [v.grid_shape for v in vols]
        if timings is not None:
            for key, dt in (("backbone", t0 - tb), ("deproject", t1 - t0),
                            ("fuse", t2 - t1), ("crop", t3 - t2),
                            ("fps", t4 - t3), ("pe", t5 - t4),
                            ("pool", t6 - t5)):
                timings[key] = timings.get(key, 0.0) + (dt * 1e6)
        return encoding

    def backward(self, upstream: np.ndarray, cache: dict) -> dict:
        """Backpropagate dL/dz into the parameter store.

        Returns the block gradients (positional, feature, language) for
        callers that need them; the language gradient is summed over rows
        since the vector broadcasts.
        """
        cfg = self.cfg
        d_tokens = self.pool.backward(upstream.astype(cfg.np_dtype), cache["pool"])
        d_encoded, d_features, d_lang = split_token_grad(
            d_tokens, cfg.encoded_width, cfg.cloud_feature_dim, cfg.lang_width)
        if cfg.finetune_backbone and d_features is not None and "backbone" in cache:
            indices = cache["indices"]
            offset = 0
            for cam, (h, w) in enumerate(cache["grid_shapes"]):
                n = h * w
                d_vol = np.zeros((n, cfg.feature_dim), dtype=d_features.dtype)
                in_cam = (indices >= offset) & (indices < offset + n)
                np.add.at(d_vol, indices[in_cam] - offset, d_features[in_cam])
                d_w1, d_w2 = self.backbone.extract_backward(
                    d_vol.reshape(h, w, cfg.feature_dim), cache["backbone"][cam])
                self.store.add_grad("backbone.w1", d_w1)
                self.store.add_grad("backbone.w2", d_w2)
                offset += n
        return {"encoded": d_encoded, "features": d_features, "lang": d_lang}
