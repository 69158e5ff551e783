"""Named parameter tensors with gradient slots, plus initializers.

Parameters are plain numpy arrays updated in place so that any module
holding a reference (e.g. the test backbone) sees optimizer steps
without re-registration. Checkpoints round-trip byte-exactly through
the binary tensor format.
"""

from __future__ import annotations

import numpy as np

from . import tensorio
from .errors import ConfigError


class Param:
    __slots__ = ("value", "grad")

    def __init__(self, value: np.ndarray):
        self.value = value
        self.grad = np.zeros_like(value)


class ParamStore:
    def __init__(self):
        self._params: dict[str, Param] = {}

    def register(self, name: str, value: np.ndarray) -> np.ndarray:
        if name in self._params:
            raise ConfigError(f"parameter {name!r} already registered")
        self._params[name] = Param(np.asarray(value))
        return self._params[name].value

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __getitem__(self, name: str) -> Param:
        return self._params[name]

    def names(self) -> list[str]:
        return sorted(self._params)

    def zero_grads(self) -> None:
        for p in self._params.values():
            p.grad[...] = 0.0

    def add_grad(self, name: str, grad: np.ndarray) -> None:
        self._params[name].grad += grad

    def grad_global_norm(self) -> float:
        total = 0.0
        for p in self._params.values():
            total += float(np.sum(p.grad * p.grad))
        return float(np.sqrt(total))

    def values(self) -> dict[str, np.ndarray]:
        return {name: p.value for name, p in self._params.items()}

    def grads(self) -> dict[str, np.ndarray]:
        return {name: p.grad for name, p in self._params.items()}

    def save(self, directory, version: str) -> None:
        tensorio.save_named_tensors(directory, self.values(), version)

    def load(self, directory) -> str:
        """Fill existing parameters from a checkpoint; returns its version."""
        tensors, version = tensorio.load_named_tensors(directory)
        missing = set(self._params) - set(tensors)
        extra = set(tensors) - set(self._params)
        if missing or extra:
            raise ConfigError(
                f"checkpoint mismatch: missing {sorted(missing)}, extra {sorted(extra)}"
            )
        for name, arr in tensors.items():
            param = self._params[name]
            if arr.shape != param.value.shape:
                raise ConfigError(
                    f"{name}: checkpoint shape {arr.shape} != {param.value.shape}"
                )
            param.value[...] = arr.astype(param.value.dtype)
        return version


def orthogonal(rng: np.random.Generator, fan_in: int, fan_out: int,
               dtype=np.float64) -> np.ndarray:
    """Orthogonal (fan_in, fan_out) matrix for x @ W layouts.

    The long side is orthonormal: columns when fan_in >= fan_out, rows
    otherwise. Sign-fixed against the QR ambiguity so draws are uniform.
    """
    flat = rng.standard_normal((max(fan_in, fan_out), min(fan_in, fan_out)))
    q, r = np.linalg.qr(flat)
    q = q * np.sign(np.diag(r))
    if fan_in < fan_out:
        q = q.T
    return q.astype(dtype)
