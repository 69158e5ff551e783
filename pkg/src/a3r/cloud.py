"""Multi-camera feature cloud construction, frame changes, and crops.

The fused cloud keeps one row per feature cell of every camera
(m = n_cam * h * w). Cropping and depth invalidity only flip the
validity mask; rows are never removed, which keeps shapes static for
batching and lets the sampler consume the mask directly.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .backbone import FeatureVolume
from .errors import ConfigError, DimensionMismatch, FrameError
from .geometry import CameraFrame, Proprioception, deproject

BASE_FRAME = "base"
EE_FRAME = "ee"

# Axis-aligned (min, max) corners in the base frame for the named world
# crops. The bounds are operator configuration; these defaults bracket
# the synthetic tabletop scenes (tight: just the table, loose: table
# plus nearby surroundings).
WORLD_BOX_PRESETS = {
    "none": None,
    "loose": ((-1.5, -1.5, -0.25), (1.5, 1.5, 2.0)),
    "tight": ((-0.8, -0.8, -0.05), (0.8, 0.8, 1.0)),
}


@dataclass(frozen=True, eq=False)
class FeatureCloud:
    points: np.ndarray    # (m, 3)
    features: np.ndarray  # (m, d)
    valid: np.ndarray     # (m,) bool
    frame: str            # BASE_FRAME or EE_FRAME

    def __post_init__(self):
        points = np.asarray(self.points)
        features = np.asarray(self.features)
        valid = np.asarray(self.valid, dtype=bool)
        m = points.shape[0]
        if points.ndim != 2 or points.shape[1] != 3:
            raise DimensionMismatch(f"points must be (m, 3), got {points.shape}")
        if features.ndim != 2 or features.shape[0] != m or valid.shape != (m,):
            raise DimensionMismatch("points/features/valid must share leading dim")
        if self.frame not in (BASE_FRAME, EE_FRAME):
            raise ConfigError(f"unknown frame tag {self.frame!r}")
        object.__setattr__(self, "points", points)
        object.__setattr__(self, "features", features)
        object.__setattr__(self, "valid", valid)

    @property
    def size(self) -> int:
        return self.points.shape[0]

    @property
    def valid_count(self) -> int:
        return int(self.valid.sum())


@dataclass(frozen=True)
class CropConfig:
    """World-box crop (base frame) plus the EE z crop (ee frame)."""

    mode: str = "tight"                 # world box preset: none | loose | tight
    world_box: tuple | None = None      # ((xmin,ymin,zmin), (xmax,ymax,zmax)) override
    ee_zmin: float | None = 0.0         # None disables the EE crop

    def __post_init__(self):
        if self.mode not in WORLD_BOX_PRESETS:
            raise ConfigError(f"unknown crop mode {self.mode!r}")
        if self.world_box is not None:
            lo, hi = np.asarray(self.world_box[0]), np.asarray(self.world_box[1])
            if lo.shape != (3,) or hi.shape != (3,) or not np.all(lo < hi):
                raise ConfigError("world_box must satisfy min < max per axis")

    def resolved_box(self):
        if self.world_box is not None:
            return self.world_box
        return WORLD_BOX_PRESETS[self.mode]


def _nearest_indices(n_src: int, n_dst: int, dtype=np.float64) -> np.ndarray:
    """Source index per destination cell, centers aligned; ties go low."""
    scale = n_src / n_dst
    centers = (np.arange(n_dst, dtype=dtype) + 0.5) * scale - 0.5
    idx = np.ceil(centers - 0.5).astype(np.intp)
    return np.clip(idx, 0, n_src - 1)


def fuse(frames: list[CameraFrame], volumes: list[FeatureVolume],
         deprojected: list | None = None) -> FeatureCloud:
    """Lift every camera into the base frame and concatenate.

    Per camera: deproject the full-resolution depth, transform with the
    camera->base extrinsic, then nearest-neighbor sample the point map
    down to the feature grid so each feature cell pairs with the depth
    pixel closest to its center. Validity is inherited from that pixel.
    ``deprojected`` may carry precomputed (point map, mask) pairs.
    """
    if len(frames) != len(volumes):
        raise DimensionMismatch(
            f"{len(frames)} frames but {len(volumes)} feature volumes"
        )
    if not frames:
        raise ConfigError("at least one camera is required")
    dims = {v.dim for v in volumes}
    if len(dims) != 1:
        raise DimensionMismatch(f"inconsistent feature dims across cameras: {dims}")

    all_points, all_feats, all_valid = [], [], []
    for cam, (frame, volume) in enumerate(zip(frames, volumes)):
        if deprojected is not None:
            points_cam, valid = deprojected[cam]
        else:
            points_cam, valid = deproject(frame)
        h_img, w_img = frame.depth.shape
        points_base = frame.extrinsic.apply(points_cam)
        h, w = volume.grid_shape
        if h > h_img or w > w_img:
            raise DimensionMismatch(
                f"camera {cam}: feature grid {h}x{w} exceeds image "
                f"{h_img}x{w_img}"
            )
        rows = _nearest_indices(h_img, h, dtype=frame.depth.dtype)
        cols = _nearest_indices(w_img, w, dtype=frame.depth.dtype)
        sel = np.ix_(rows, cols)
        all_points.append(points_base[sel].reshape(h * w, 3))
        all_valid.append(valid[sel].reshape(h * w))
        all_feats.append(volume.features.reshape(h * w, -1))
    return FeatureCloud(
        points=np.concatenate(all_points, axis=0),
        features=np.concatenate(all_feats, axis=0),
        valid=np.concatenate(all_valid, axis=0),
        frame=BASE_FRAME,
    )


def to_ee_frame(cloud: FeatureCloud, proprio: Proprioception) -> FeatureCloud:
    """Re-express a base-frame cloud in the end-effector frame."""
    if cloud.frame == EE_FRAME:
        raise FrameError("cloud is already in the end-effector frame")
    ee_points = proprio.ee_pose.inverse().apply(cloud.points)
    return FeatureCloud(ee_points, cloud.features, cloud.valid, EE_FRAME)


def apply_crops(cloud: FeatureCloud, cfg: CropConfig) -> FeatureCloud:
    """Invalidate rows outside the crop that applies to the cloud's frame.

    Base-frame clouds get the world box; ee-frame clouds get the z crop.
    Crops only ever clear validity, so tightening never re-admits a point.
    """
    valid = cloud.valid.copy()
    if cloud.frame == BASE_FRAME:
        box = cfg.resolved_box()
        if box is not None:
            lo = np.asarray(box[0], dtype=cloud.points.dtype)
            hi = np.asarray(box[1], dtype=cloud.points.dtype)
            inside = np.all((cloud.points >= lo) & (cloud.points <= hi), axis=1)
            valid &= inside
    else:
        if cfg.ee_zmin is not None:
            valid &= cloud.points[:, 2] >= cfg.ee_zmin
    return replace(cloud, valid=valid)


def feature_colors(features: np.ndarray) -> np.ndarray:
    """Project features to RGB via PCA for visualization; returns uint8."""
    feats = np.asarray(features, dtype=np.float64)
    if feats.shape[1] >= 3:
        centered = feats - feats.mean(axis=0, keepdims=True)
        _, _, vt = np.linalg.svd(centered, full_matrices=False)
        proj = centered @ vt[:3].T
    else:
        proj = np.zeros((feats.shape[0], 3))
        proj[:, : feats.shape[1]] = feats
    lo = proj.min(axis=0, keepdims=True)
    span = proj.max(axis=0, keepdims=True) - lo
    span[span == 0] = 1.0
    return np.clip((proj - lo) / span * 255.0, 0, 255).astype(np.uint8)


def write_ply(path, points: np.ndarray, colors: np.ndarray,
              attention: np.ndarray | None = None) -> None:
    """ASCII PLY dump: xyz, uchar rgb, optional float attention property."""
    points = np.asarray(points)
    colors = np.asarray(colors)
    if colors.shape != points.shape:
        raise DimensionMismatch("colors must be (n, 3) matching points")
    lines = [
        "ply",
        "format ascii 1.0",
        f"element vertex {points.shape[0]}",
        "property float x",
        "property float y",
        "property float z",
        "property uchar red",
        "property uchar green",
        "property uchar blue",
    ]
    if attention is not None:
        lines.append("property float attention")
    lines.append("end_header")
    for i in range(points.shape[0]):
        x, y, z = points[i]
        r, g, b = (int(c) for c in colors[i])
        row = f"{x:.6f} {y:.6f} {z:.6f} {r} {g} {b}"
        if attention is not None:
            row += f" {float(attention[i]):.8f}"
        lines.append(row)
    Path(path).write_text("\n".join(lines) + "\n")
