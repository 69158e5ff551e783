"""Pinhole camera model and rigid transforms between frames.

Coordinate conventions (right-handed throughout):

    Camera frame:  x right, y down, z forward along the optical axis.
    Robot base:    world-fixed frame the extrinsics map into.
    EE frame:      attached to the gripper; +z points outward from it.

    Pixel (u, v) with z-depth d deprojects to
        x = (u - cx) * d / fx
        y = (v - cy) * d / fy
        z = d
    where u indexes columns and v indexes rows.

Extrinsics are stored camera->base: applying one to camera-frame points
yields base-frame points directly. Depth pixels equal to 0 or NaN are
invalid and are carried as a mask, never as sentinel points.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError, DimensionMismatch

ROTATION_TOL = 1e-6          # accepted as-is below this orthonormality drift
REORTHONORMALIZE_TOL = 1e-3  # repaired via polar decomposition up to this


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ConfigError("focal lengths must be positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ConfigError("principal point must lie inside the image")


def _rotation_drift(rotation: np.ndarray) -> float:
    return float(np.abs(rotation.T @ rotation - np.eye(3)).max())


@dataclass(frozen=True, eq=False)
class RigidTransform:
    """Rotation + translation, i.e. an SE(3) element."""

    rotation: np.ndarray     # (3, 3), orthonormal, det +1
    translation: np.ndarray  # (3,), meters

    def __post_init__(self):
        rotation = np.asarray(self.rotation, dtype=np.float64).reshape(3, 3)
        translation = np.asarray(self.translation, dtype=np.float64).reshape(3)
        if _rotation_drift(rotation) > ROTATION_TOL:
            raise ConfigError("rotation is not orthonormal within tolerance")
        if np.linalg.det(rotation) < 0:
            raise ConfigError("rotation has negative determinant (reflection)")
        object.__setattr__(self, "rotation", rotation)
        object.__setattr__(self, "translation", translation)

    @staticmethod
    def identity() -> "RigidTransform":
        return RigidTransform(np.eye(3), np.zeros(3))

    @staticmethod
    def from_matrix(matrix, reorthonormalize: bool = False) -> "RigidTransform":
        """Build from a 4x4 homogeneous matrix.

        With ``reorthonormalize`` the rotation block is repaired via polar
        decomposition when its drift is at most REORTHONORMALIZE_TOL;
        larger drift is rejected either way.
        """
        m = np.asarray(matrix, dtype=np.float64).reshape(4, 4)
        rot = m[:3, :3]
        drift = _rotation_drift(rot)
        if drift > ROTATION_TOL:
            if not reorthonormalize or drift > REORTHONORMALIZE_TOL:
                raise ConfigError(f"rotation drift {drift:.2e} out of tolerance")
            u, _, vt = np.linalg.svd(rot)
            rot = u @ vt
            if np.linalg.det(rot) < 0:
                raise ConfigError("nearest orthonormal matrix is a reflection")
        return RigidTransform(rot, m[:3, 3])

    def matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.rotation
        m[:3, 3] = self.translation
        return m

    def compose(self, other: "RigidTransform") -> "RigidTransform":
        """self o other: apply ``other`` first, then ``self``."""
        return RigidTransform(
            self.rotation @ other.rotation,
            self.rotation @ other.translation + self.translation,
        )

    def inverse(self) -> "RigidTransform":
        rot_inv = self.rotation.T
        return RigidTransform(rot_inv, -rot_inv @ self.translation)

    def apply(self, points: np.ndarray) -> np.ndarray:
        """Transform an (..., 3) array of points."""
        points = np.asarray(points)
        return points @ self.rotation.T.astype(points.dtype) + self.translation.astype(
            points.dtype
        )


@dataclass(frozen=True, eq=False)
class CameraFrame:
    """One camera's RGBD observation plus calibration."""

    rgb: np.ndarray    # (H, W, 3), values in [0, 1]
    depth: np.ndarray  # (H, W), meters; NaN or 0 marks invalid pixels
    intrinsics: CameraIntrinsics
    extrinsic: RigidTransform  # camera -> base

    def __post_init__(self):
        rgb = np.asarray(self.rgb)
        depth = np.asarray(self.depth)
        if rgb.ndim != 3 or rgb.shape[2] != 3:
            raise DimensionMismatch(f"rgb must be (H, W, 3), got {rgb.shape}")
        if depth.shape != rgb.shape[:2]:
            raise DimensionMismatch(
                f"depth {depth.shape} does not match rgb {rgb.shape[:2]}"
            )
        if rgb.size and (np.nanmin(rgb) < 0 or np.nanmax(rgb) > 1):
            raise ConfigError("rgb values must lie in [0, 1]")
        finite = np.isfinite(depth)
        if np.any(np.isinf(depth)) or np.any(depth[finite] < 0):
            raise ConfigError("valid depth values must be finite and positive")
        object.__setattr__(self, "rgb", rgb)
        object.__setattr__(self, "depth", depth)


@dataclass(frozen=True, eq=False)
class Proprioception:
    ee_pose: RigidTransform  # end-effector in the robot base frame
    gripper_state: float     # in [0, 1]

    def __post_init__(self):
        if not 0 <= self.gripper_state <= 1:
            raise ConfigError("gripper_state must lie in [0, 1]")

    def vector(self) -> np.ndarray:
        """Flat input for the proprioception encoder: position + gripper."""
        return np.concatenate(
            [self.ee_pose.translation, [self.gripper_state]]
        )


def deproject(frame: CameraFrame) -> tuple[np.ndarray, np.ndarray]:
    """Depth image -> (H, W, 3) camera-frame point map + validity mask.

    Invalid pixels keep a zero point but are excluded via the mask.
    """
    depth = frame.depth
    intr = frame.intrinsics
    h, w = depth.shape
    valid = np.isfinite(depth) & (depth > 0)
    z = np.where(valid, depth, 0.0)
    u = np.arange(w, dtype=depth.dtype)
    v = np.arange(h, dtype=depth.dtype)
    x = (u[None, :] - intr.cx) * z / intr.fx
    y = (v[:, None] - intr.cy) * z / intr.fy
    return np.stack([x, y, z], axis=-1), valid


def transform_points(points: np.ndarray, transform: RigidTransform) -> np.ndarray:
    return transform.apply(points)


def invert(transform: RigidTransform) -> RigidTransform:
    return transform.inverse()


_CALIB_FIELDS = {"fx", "fy", "cx", "cy", "width", "height", "extrinsic"}


def parse_calibration(entries) -> list[tuple[CameraIntrinsics, RigidTransform]]:
    """Parse the calibration JSON structure (list of per-camera dicts).

    The parse is strict: unknown fields are rejected so that a typo in a
    calibration file fails loudly instead of silently using defaults.
    """
    if isinstance(entries, dict):
        entries = [entries]
    if not isinstance(entries, list) or not entries:
        raise ConfigError("calibration must be a non-empty list of cameras")
    cameras = []
    for i, entry in enumerate(entries):
        unknown = set(entry) - _CALIB_FIELDS
        if unknown:
            raise ConfigError(f"camera {i}: unknown calibration fields {sorted(unknown)}")
        missing = _CALIB_FIELDS - set(entry)
        if missing:
            raise ConfigError(f"camera {i}: missing calibration fields {sorted(missing)}")
        ext = np.asarray(entry["extrinsic"], dtype=np.float64)
        if ext.shape != (16,):
            raise ConfigError(f"camera {i}: extrinsic must be 16 numbers, row-major 4x4")
        intr = CameraIntrinsics(
            fx=float(entry["fx"]),
            fy=float(entry["fy"]),
            cx=float(entry["cx"]),
            cy=float(entry["cy"]),
            width=int(entry["width"]),
            height=int(entry["height"]),
        )
        pose = RigidTransform.from_matrix(ext.reshape(4, 4), reorthonormalize=True)
        cameras.append((intr, pose))
    return cameras


def load_calibration(path) -> list[tuple[CameraIntrinsics, RigidTransform]]:
    return parse_calibration(json.loads(Path(path).read_text()))


def calibration_to_json(cameras) -> list[dict]:
    out = []
    for intr, ext in cameras:
        out.append(
            {
                "fx": intr.fx,
                "fy": intr.fy,
                "cx": intr.cx,
                "cy": intr.cy,
                "width": intr.width,
                "height": intr.height,
                "extrinsic": [float(v) for v in ext.matrix().reshape(-1)],
            }
        )
    return out
