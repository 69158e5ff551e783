"""Positional encoding, token assembly, and set pooling with gradients.

The pooling reduces a p-row token cloud to one embedding z. Attention
pooling computes z = softmax(q K(P) / sqrt(d_k)) V(P) with a learned
query and two-layer key/value networks; the max-pool variant replaces
the weighted sum with a per-dimension max over V(P).

Positional encoding layout is a frozen contract: coordinate-major,
frequency-minor, sin before cos, i.e. for point (x, y, z) the row is
    sin(2^0 pi x), cos(2^0 pi x), ..., sin(2^(L-1) pi x), cos(2^(L-1) pi x),
    then the same 2L terms for y and for z.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DimensionMismatch, NonFiniteError
from .nets import DenseNet
from .params import ParamStore


@dataclass(frozen=True)
class PositionalEncodingConfig:
    frequencies: int = 10  # L

    def __post_init__(self):
        if self.frequencies < 1:
            raise ConfigError("frequency count must be >= 1")

    @property
    def width(self) -> int:
        return 2 * 3 * self.frequencies


@dataclass(frozen=True, eq=False)
class SceneEncoding:
    z: np.ndarray          # (d_e,)
    attention: np.ndarray  # (p,), nonnegative, sums to 1


def positional_encode(points: np.ndarray,
                      cfg: PositionalEncodingConfig = PositionalEncodingConfig()
                      ) -> np.ndarray:
    """(p, 3) points -> (p, 6L) Fourier features."""
    points = np.asarray(points)
    if points.ndim != 2 or points.shape[1] != 3:
        raise DimensionMismatch(f"expected (p, 3) points, got {points.shape}")
    freqs = (2.0 ** np.arange(cfg.frequencies)) * np.pi
    angles = points[:, :, None] * freqs.astype(points.dtype)  # (p, 3, L)
    out = np.empty((points.shape[0], 3, cfg.frequencies, 2), dtype=points.dtype)
    out[..., 0] = np.sin(angles)
    out[..., 1] = np.cos(angles)
    return out.reshape(points.shape[0], cfg.width)


def assemble_tokens(encoded: np.ndarray, features: np.ndarray | None,
                    lang: np.ndarray | None) -> np.ndarray:
    """Concatenate [encoded | features | lang] per row.

    ``encoded`` is the positional block (6L wide, or raw 3-wide positions
    when the encoding is ablated); ``features`` and ``lang`` may each be
    None when their block is ablated. The language vector broadcasts to
    every row.
    """
    encoded = np.asarray(encoded)
    p = encoded.shape[0]
    blocks = [encoded]
    if features is not None:
        features = np.asarray(features)
        if features.shape[0] != p:
            raise DimensionMismatch(
                f"features rows {features.shape[0]} != encoded rows {p}"
            )
        blocks.append(features)
    if lang is not None:
        lang = np.asarray(lang).reshape(1, -1)
        blocks.append(np.broadcast_to(lang, (p, lang.shape[1])))
    tokens = np.concatenate(blocks, axis=1)
    if not np.all(np.isfinite(tokens)):
        raise NonFiniteError("token cloud contains non-finite values")
    return tokens


def split_token_grad(d_tokens: np.ndarray, encoded_width: int,
                     feature_width: int, lang_width: int):
    """Invert assemble_tokens for gradients.

    Returns (d_encoded, d_features, d_lang); the language gradient is the
    sum over rows since the vector was broadcast. Absent blocks give None.
    """
    d_encoded = d_tokens[:, :encoded_width]
    d_features = None
    d_lang = None
    offset = encoded_width
    if feature_width:
        d_features = d_tokens[:, offset:offset + feature_width]
        offset += feature_width
    if lang_width:
        d_lang = d_tokens[:, offset:offset + lang_width].sum(axis=0)
    return d_encoded, d_features, d_lang


class AttentionPool:
    """Single-query attention pooling with analytic gradients."""

    def __init__(self, store: ParamStore, token_width: int, key_dim: int,
                 embed_dim: int, rng: np.random.Generator, dtype=np.float64,
                 prefix: str = "pool"):
        self.key_dim = key_dim
        self.embed_dim = embed_dim
        self.store = store
        self.prefix = prefix
        self.key_net = DenseNet(store, f"{prefix}.key",
                                [token_width, embed_dim, key_dim], rng, dtype)
        self.value_net = DenseNet(store, f"{prefix}.value",
                                  [token_width, embed_dim, embed_dim], rng, dtype)
        self.query = store.register(
            f"{prefix}.query",
            (rng.standard_normal(key_dim) / np.sqrt(key_dim)).astype(dtype),
        )

    def forward(self, tokens: np.ndarray, cache: dict | None = None) -> SceneEncoding:
        keys = self.key_net.forward(tokens, _cache_list(cache, "key"))
        values = self.value_net.forward(tokens, _cache_list(cache, "value"))
        logits = (keys @ self.query) / np.sqrt(self.key_dim)
        if not np.all(np.isfinite(logits)):
            raise NonFiniteError("attention logits are non-finite")
        shifted = logits - logits.max()
        exp = np.exp(shifted)
        weights = exp / exp.sum()
        z = weights @ values
        if not (np.all(np.isfinite(z)) and np.all(np.isfinite(weights))):
            raise NonFiniteError("attention pooling produced non-finite values")
        if cache is not None:
            cache["keys"] = keys
            cache["values"] = values
            cache["weights"] = weights
        return SceneEncoding(z=z, attention=weights)

    def backward(self, upstream: np.ndarray, cache: dict) -> np.ndarray:
        """dL/dz -> dL/dtokens, accumulating parameter grads in the store."""
        if not cache or "weights" not in cache:
            raise ConfigError("attention backward requires a forward cache")
        keys, values, weights = cache["keys"], cache["values"], cache["weights"]
        d_values = np.outer(weights, upstream)
        d_weights = values @ upstream
        # softmax jacobian: dlogit = w * (dw - <w, dw>)
        d_logits = weights * (d_weights - float(weights @ d_weights))
        scale = 1.0 / np.sqrt(self.key_dim)
        self.store.add_grad(f"{self.prefix}.query", (d_logits @ keys) * scale)
        d_keys = np.outer(d_logits, self.query) * scale
        d_tokens = self.key_net.backward(d_keys, cache["key"])
        d_tokens = d_tokens + self.value_net.backward(d_values, cache["value"])
        return d_tokens


class MaxPool:
    """Per-dimension max over V(P); the no-attention ablation.

    The attention slot is filled with the average of the per-dimension
    argmax one-hots, which is a diagnostic rather than a learned map.
    """

    def __init__(self, store: ParamStore, token_width: int, embed_dim: int,
                 rng: np.random.Generator, dtype=np.float64, prefix: str = "pool"):
        self.embed_dim = embed_dim
        self.store = store
        self.prefix = prefix
        self.value_net = DenseNet(store, f"{prefix}.value",
                                  [token_width, embed_dim, embed_dim], rng, dtype)

    def forward(self, tokens: np.ndarray, cache: dict | None = None) -> SceneEncoding:
        values = self.value_net.forward(tokens, _cache_list(cache, "value"))
        argmax = values.argmax(axis=0)  # ties resolve to the lowest row
        z = values[argmax, np.arange(values.shape[1])]
        if not np.all(np.isfinite(z)):
            raise NonFiniteError("max pooling produced non-finite values")
        attention = np.bincount(argmax, minlength=values.shape[0]).astype(values.dtype)
        attention /= values.shape[1]
        if cache is not None:
            cache["argmax"] = argmax
            cache["values_shape"] = values.shape
        return SceneEncoding(z=z, attention=attention)

    def backward(self, upstream: np.ndarray, cache: dict) -> np.ndarray:
        if not cache or "argmax" not in cache:
            raise ConfigError("max-pool backward requires a forward cache")
        argmax = cache["argmax"]
        d_values = np.zeros(cache["values_shape"], dtype=upstream.dtype)
        d_values[argmax, np.arange(d_values.shape[1])] = upstream
        return self.value_net.backward(d_values, cache["value"])


def _cache_list(cache: dict | None, name: str) -> list | None:
    if cache is None:
        return None
    cache[name] = []
    return cache[name]
