"""Pluggable 2D feature extraction and language embedding.

Real deployments compute semantic feature volumes with a pretrained
vision model and feed them in through ``load_feature_volume``. For tests
and self-contained runs there is a deterministic built-in backbone: a
strided patch embedding followed by a bias-free two-layer projection,
fully defined by (seed, stride, feature_dim). It is linear at zero input
and supports analytic gradients, so end-to-end finetuning is exercisable.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

from . import tensorio
from .errors import ConfigError, DimensionMismatch
from .geometry import CameraFrame


@dataclass(frozen=True, eq=False)
class FeatureVolume:
    features: np.ndarray  # (h, w, d)

    def __post_init__(self):
        feats = np.asarray(self.features)
        if feats.ndim != 3:
            raise DimensionMismatch(f"feature volume must be rank 3, got {feats.ndim}")
        if not np.all(np.isfinite(feats)):
            raise ConfigError("feature volume contains non-finite values")
        object.__setattr__(self, "features", feats)

    @property
    def grid_shape(self) -> tuple[int, int]:
        return self.features.shape[0], self.features.shape[1]

    @property
    def dim(self) -> int:
        return self.features.shape[2]


@dataclass(frozen=True, eq=False)
class LanguageEmbedding:
    vector: np.ndarray  # (d,)

    def __post_init__(self):
        vec = np.asarray(self.vector)
        if vec.ndim != 1:
            raise DimensionMismatch("language embedding must be a flat vector")
        if not np.all(np.isfinite(vec)):
            raise ConfigError("language embedding contains non-finite values")
        object.__setattr__(self, "vector", vec)


class TestBackbone:
    """Deterministic feature extractor standing in for a pretrained model.

    RGB patches of ``stride`` x ``stride`` pixels are flattened and pushed
    through tanh(x W1) W2 without biases, so an all-zero image maps to an
    all-zero volume and the whole map is smooth for gradient checks.
    """

    __test__ = False  # not a pytest class, despite the name

    def __init__(self, feature_dim: int = 64, stride: int = 16, seed: int = 0,
                 dtype=np.float64):
        if feature_dim < 1 or stride < 1:
            raise ConfigError("feature_dim and stride must be >= 1")
        self.feature_dim = feature_dim
        self.stride = stride
        self.seed = seed
        rng = np.random.default_rng(seed)
        fan_in = stride * stride * 3
        self.w1 = (rng.standard_normal((fan_in, feature_dim)) / np.sqrt(fan_in)).astype(dtype)
        self.w2 = (rng.standard_normal((feature_dim, feature_dim))
                   / np.sqrt(feature_dim)).astype(dtype)

    def _patchify(self, rgb: np.ndarray) -> np.ndarray:
        s = self.stride
        h, w = rgb.shape[0] // s, rgb.shape[1] // s
        if h < 1 or w < 1:
            raise DimensionMismatch(
                f"image {rgb.shape[:2]} smaller than stride {s}"
            )
        # Trailing pixels that do not fill a whole patch are dropped.
        patches = rgb[: h * s, : w * s].reshape(h, s, w, s, 3)
        return patches.transpose(0, 2, 1, 3, 4).reshape(h, w, s * s * 3)

    def extract(self, frame: CameraFrame, cache: dict | None = None) -> FeatureVolume:
        patches = self._patchify(np.asarray(frame.rgb, dtype=self.w1.dtype))
        hidden = np.tanh(patches @ self.w1)
        feats = hidden @ self.w2
        if cache is not None:
            cache["patches"] = patches
            cache["hidden"] = hidden
        return FeatureVolume(feats)

    def extract_backward(self, d_features: np.ndarray,
                         cache: dict) -> tuple[np.ndarray, np.ndarray]:
        """dL/d(volume) -> (dL/dw1, dL/dw2)."""
        patches, hidden = cache["patches"], cache["hidden"]
        h, w, _ = patches.shape
        dout = d_features.reshape(h * w, -1)
        hid = hidden.reshape(h * w, -1)
        pat = patches.reshape(h * w, -1)
        d_w2 = hid.T @ dout
        dhid = (dout @ self.w2.T) * (1.0 - hid * hid)
        d_w1 = pat.T @ dhid
        return d_w1, d_w2

    def embed_language(self, instruction: str) -> LanguageEmbedding:
        """Hash tokens into a unit-norm d-dim vector; pure in (text, seed)."""
        tokens = instruction.lower().split()
        if not tokens:
            raise ConfigError("instruction must be non-empty")
        vec = np.zeros(self.feature_dim, dtype=self.w1.dtype)
        for token in tokens:
            digest = hashlib.sha256(f"{self.seed}|{token}".encode()).digest()
            token_rng = np.random.default_rng(int.from_bytes(digest[:8], "little"))
            vec += token_rng.standard_normal(self.feature_dim)
        norm = np.linalg.norm(vec)
        if norm == 0:
            vec[0] = 1.0
            norm = 1.0
        return LanguageEmbedding(vec / norm)


def extract_features(frame: CameraFrame, backbone: TestBackbone,
                     expected_dim: int | None = None) -> FeatureVolume:
    volume = backbone.extract(frame)
    if expected_dim is not None and volume.dim != expected_dim:
        raise DimensionMismatch(
            f"backbone produced d={volume.dim}, configured d={expected_dim}"
        )
    return volume


def embed_language(instruction: str, backbone: TestBackbone) -> LanguageEmbedding:
    return backbone.embed_language(instruction)


def save_feature_volume(path, volume: FeatureVolume) -> None:
    tensorio.save_tensor(path, volume.features)


def load_feature_volume(path) -> FeatureVolume:
    return FeatureVolume(tensorio.load_tensor(path, expected_rank=3))
