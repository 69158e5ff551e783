"""Small dense networks with hand-written backward passes.

tanh between layers, linear output. Weights are registered in a
ParamStore under ``<prefix>.w<i>`` / ``<prefix>.b<i>`` and initialized
orthogonally (biases at zero).
"""

from __future__ import annotations

import numpy as np

from .errors import ConfigError
from .params import ParamStore, orthogonal


class DenseNet:
    def __init__(self, store: ParamStore, prefix: str, sizes: list[int],
                 rng: np.random.Generator, dtype=np.float64):
        if len(sizes) < 2:
            raise ConfigError("DenseNet needs at least input and output sizes")
        self.store = store
        self.prefix = prefix
        self.sizes = list(sizes)
        self.weights = []
        self.biases = []
        for i, (n_in, n_out) in enumerate(zip(sizes[:-1], sizes[1:]), start=1):
            w = store.register(f"{prefix}.w{i}", orthogonal(rng, n_in, n_out, dtype))
            b = store.register(f"{prefix}.b{i}", np.zeros(n_out, dtype=dtype))
            self.weights.append(w)
            self.biases.append(b)

    @property
    def in_dim(self) -> int:
        return self.sizes[0]

    @property
    def out_dim(self) -> int:
        return self.sizes[-1]

    def forward(self, x: np.ndarray, cache: list | None = None) -> np.ndarray:
        """x may be (n, in_dim) or (in_dim,); output shape follows suit."""
        squeeze = x.ndim == 1
        h = np.atleast_2d(x)
        if cache is not None:
            cache.clear()
            cache.append(h)
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            h = h @ w + b
            if i != last:
                h = np.tanh(h)
            if cache is not None:
                cache.append(h)
        return h[0] if squeeze else h

    def backward(self, d_out: np.ndarray, cache: list) -> np.ndarray:
        """Accumulate parameter grads; returns dL/dx with x's shape."""
        if not cache:
            raise ConfigError("backward called without a forward cache")
        squeeze = d_out.ndim == 1
        d = np.atleast_2d(d_out)
        last = len(self.weights) - 1
        for i in range(last, -1, -1):
            if i != last:
                act = cache[i + 1]  # tanh output of layer i
                d = d * (1.0 - act * act)
            self.store.add_grad(f"{self.prefix}.w{i + 1}", cache[i].T @ d)
            self.store.add_grad(f"{self.prefix}.b{i + 1}", d.sum(axis=0))
            d = d @ self.weights[i].T
        return d[0] if squeeze else d
