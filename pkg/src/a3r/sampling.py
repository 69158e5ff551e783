"""Farthest-point sampling over features (default) or positions.

The selection is fully deterministic: the walk starts at the first valid
row at or after ``seed_index`` and every later pick maximizes the minimum
squared distance to the chosen set, breaking ties toward the lowest row
index. Clouds with fewer valid rows than requested cycle the selection
so every output row is a real observation.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .cloud import FeatureCloud
from .errors import ConfigError, DimensionMismatch

FEATURE_METRIC = "feature"
POSITION_METRIC = "position"


@dataclass(frozen=True)
class SamplerConfig:
    num_points: int                   # p
    metric: str = FEATURE_METRIC
    seed_index: int = 0
    randomize_start: bool = False     # training-time augmentation

    def __post_init__(self):
        if self.num_points < 1:
            raise ConfigError("num_points must be >= 1")
        if self.metric not in (FEATURE_METRIC, POSITION_METRIC):
            raise ConfigError(f"unknown sampling metric {self.metric!r}")


@dataclass(frozen=True, eq=False)
class DownsampledCloud:
    points: np.ndarray    # (p, 3)
    features: np.ndarray  # (p, d)


def farthest_point_sample(cloud: FeatureCloud, cfg: SamplerConfig,
                          rng: np.random.Generator | None = None) -> np.ndarray:
    """Greedy max-min FPS; returns ``cfg.num_points`` row indices."""
    data = cloud.features if cfg.metric == FEATURE_METRIC else cloud.points
    data = np.asarray(data)
    valid = cloud.valid
    n_valid = int(valid.sum())
    if n_valid == 0:
        raise ConfigError("cannot sample from a cloud with zero valid points")

    if cfg.randomize_start and rng is not None:
        seed_index = int(rng.integers(0, cloud.size))
    else:
        seed_index = cfg.seed_index
    at_or_after = np.flatnonzero(valid[seed_index:])
    if at_or_after.size:
        start = seed_index + int(at_or_after[0])
    else:
        start = int(np.flatnonzero(valid)[0])  # wrap to the first valid row

    n_pick = min(cfg.num_points, n_valid)
    selection = np.empty(n_pick, dtype=np.intp)
    selection[0] = start
    # min_d2[i] = squared distance from row i to the chosen set; invalid
    # and already-chosen rows sit at -inf so argmax never returns them.
    # argmax returns the first maximum, which is the lowest-index tie rule.
    diff = data - data[start]
    min_d2 = np.einsum("ij,ij->i", diff, diff).astype(np.float64)
    min_d2[~valid] = -np.inf
    min_d2[start] = -np.inf
    for k in range(1, n_pick):
        nxt = int(np.argmax(min_d2))
        selection[k] = nxt
        diff = data - data[nxt]
        d2 = np.einsum("ij,ij->i", diff, diff).astype(np.float64)
        np.minimum(min_d2, d2, out=min_d2)
        min_d2[nxt] = -np.inf
    if n_pick == cfg.num_points:
        return selection
    reps = -(-cfg.num_points // n_pick)  # ceil
    return np.tile(selection, reps)[: cfg.num_points]


def gather(cloud: FeatureCloud, indices: np.ndarray) -> DownsampledCloud:
    """Copy the indexed rows in order; rejects invalid or out-of-range rows."""
    idx = np.asarray(indices, dtype=np.intp)
    if idx.size and (idx.min() < 0 or idx.max() >= cloud.size):
        raise DimensionMismatch("gather index out of range")
    if not np.all(cloud.valid[idx]):
        raise ConfigError("gather hit a row marked invalid")
    return DownsampledCloud(points=cloud.points[idx].copy(),
                            features=cloud.features[idx].copy())
