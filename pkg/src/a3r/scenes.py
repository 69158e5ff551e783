"""Analytic RGBD scenes: ray-cast rendering with exact depth.

Primitives are spheres, axis-aligned boxes, and horizontal planes with
flat-shaded albedo. Depth is the ray parameter for rays cast with unit
z in the camera frame, i.e. exactly the z-depth the pinhole model
expects, so deprojection reproduces surface points to float precision.
Also provides the scripted reach task used by the toy trainer.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import tensorio
from .errors import ConfigError
from .geometry import (CameraFrame, CameraIntrinsics, Proprioception,
                       RigidTransform, calibration_to_json, parse_calibration)

_EPS = 1e-9


@dataclass(frozen=True)
class Sphere:
    center: tuple
    radius: float
    albedo: tuple = (0.7, 0.7, 0.7)

    def __post_init__(self):
        if not self.radius > 0:
            raise ConfigError("sphere radius must be positive")


@dataclass(frozen=True)
class Box:
    center: tuple
    half_extents: tuple
    albedo: tuple = (0.7, 0.7, 0.7)

    def __post_init__(self):
        if not all(h > 0 for h in self.half_extents):
            raise ConfigError("box half extents must be positive")


@dataclass(frozen=True)
class Plane:
    z: float
    albedo: tuple = (0.7, 0.7, 0.7)
    # Amplitude of a fixed smooth albedo pattern over (x, y). Gives flat
    # surfaces view-independent appearance variation, the way real
    # tabletops have markings; 0 means a uniform color.
    texture: float = 0.0

    def albedo_at(self, points: np.ndarray) -> np.ndarray:
        base = np.asarray(self.albedo)
        if self.texture == 0.0:
            return np.broadcast_to(base, points.shape[:-1] + (3,))
        x, y = points[..., 0], points[..., 1]
        two_pi = 2.0 * np.pi
        wave = np.stack(
            [np.sin(two_pi * x / 0.5), np.sin(two_pi * y / 0.5),
             np.sin(two_pi * (x + y) / 0.7)],
            axis=-1,
        )
        return np.clip(base + self.texture * wave, 0.0, 1.0)


@dataclass(frozen=True, eq=False)
class SceneSpec:
    primitives: list
    cameras: list            # [(CameraIntrinsics, RigidTransform camera->base)]
    ee_pose: RigidTransform
    seed: int = 0

    def __post_init__(self):
        if not self.cameras:
            raise ConfigError("a scene needs at least one camera")
        for prim in self.primitives:
            if not np.all(np.isfinite(_primitive_params(prim))):
                raise ConfigError("primitive parameters must be finite")

    def to_json(self) -> dict:
        prims = []
        for p in self.primitives:
            if isinstance(p, Sphere):
                prims.append({"type": "sphere", "center": list(p.center),
                              "radius": p.radius, "albedo": list(p.albedo)})
            elif isinstance(p, Box):
                prims.append({"type": "box", "center": list(p.center),
                              "half_extents": list(p.half_extents),
                              "albedo": list(p.albedo)})
            else:
                prims.append({"type": "plane", "z": p.z, "albedo": list(p.albedo),
                              "texture": p.texture})
        return {
            "seed": self.seed,
            "primitives": prims,
            "cameras": calibration_to_json(self.cameras),
            "ee_pose": [float(v) for v in self.ee_pose.matrix().reshape(-1)],
        }

    @staticmethod
    def from_json(data: dict) -> "SceneSpec":
        prims = []
        for p in data["primitives"]:
            kind = p["type"]
            if kind == "sphere":
                prims.append(Sphere(tuple(p["center"]), p["radius"], tuple(p["albedo"])))
            elif kind == "box":
                prims.append(Box(tuple(p["center"]), tuple(p["half_extents"]),
                                 tuple(p["albedo"])))
            elif kind == "plane":
                prims.append(Plane(p["z"], tuple(p["albedo"]),
                                   texture=p.get("texture", 0.0)))
            else:
                raise ConfigError(f"unknown primitive type {kind!r}")
        cams = parse_calibration(data["cameras"])
        ee = RigidTransform.from_matrix(np.asarray(data["ee_pose"]).reshape(4, 4))
        return SceneSpec(prims, cams, ee, seed=data.get("seed", 0))


def _primitive_params(prim) -> np.ndarray:
    if isinstance(prim, Sphere):
        return np.asarray([*prim.center, prim.radius])
    if isinstance(prim, Box):
        return np.asarray([*prim.center, *prim.half_extents])
    return np.asarray([prim.z])


def _ray_hits(prim, origin: np.ndarray, dirs: np.ndarray) -> np.ndarray:
    """Smallest ray parameter t > 0 per pixel, inf where the ray misses."""
    t = np.full(dirs.shape[:2], np.inf)
    if isinstance(prim, Plane):
        dz = dirs[..., 2]
        with np.errstate(divide="ignore", invalid="ignore"):
            cand = (prim.z - origin[2]) / dz
        hit = (dz != 0) & (cand > _EPS)
        t[hit] = cand[hit]
    elif isinstance(prim, Sphere):
        oc = origin - np.asarray(prim.center)
        a = np.einsum("hwc,hwc->hw", dirs, dirs)
        b = 2.0 * (dirs @ oc)
        c = oc @ oc - prim.radius ** 2
        disc = b * b - 4.0 * a * c
        hit = disc >= 0
        sq = np.sqrt(np.where(hit, disc, 0.0))
        near = (-b - sq) / (2.0 * a)
        far = (-b + sq) / (2.0 * a)
        cand = np.where(near > _EPS, near, far)
        ok = hit & (cand > _EPS)
        t[ok] = cand[ok]
    elif isinstance(prim, Box):
        lo = np.asarray(prim.center) - np.asarray(prim.half_extents)
        hi = np.asarray(prim.center) + np.asarray(prim.half_extents)
        with np.errstate(divide="ignore", invalid="ignore"):
            t1 = (lo - origin) / dirs
            t2 = (hi - origin) / dirs
        near = np.nanmax(np.minimum(t1, t2), axis=-1)
        far = np.nanmin(np.maximum(t1, t2), axis=-1)
        cand = np.where(near > _EPS, near, far)
        ok = (far >= near) & (cand > _EPS)
        t[ok] = cand[ok]
    else:
        raise ConfigError(f"unknown primitive {type(prim).__name__}")
    return t


def render(spec: SceneSpec, depth_noise: float = 0.0,
           rng: np.random.Generator | None = None) -> list[CameraFrame]:
    """Ray-cast every camera; pixels with no hit carry NaN depth."""
    frames = []
    for intr, extrinsic in spec.cameras:
        u = np.arange(intr.width, dtype=np.float64)
        v = np.arange(intr.height, dtype=np.float64)
        dirs_cam = np.stack(
            [
                np.broadcast_to((u - intr.cx) / intr.fx, (intr.height, intr.width)),
                np.broadcast_to(((v - intr.cy) / intr.fy)[:, None],
                                (intr.height, intr.width)),
                np.ones((intr.height, intr.width)),
            ],
            axis=-1,
        )
        dirs = dirs_cam @ extrinsic.rotation.T
        origin = extrinsic.translation
        depth = np.full((intr.height, intr.width), np.inf)
        rgb = np.zeros((intr.height, intr.width, 3))
        winner = np.full(depth.shape, -1, dtype=np.intp)
        for k, prim in enumerate(spec.primitives):
            t = _ray_hits(prim, origin, dirs)
            closer = t < depth
            depth[closer] = t[closer]
            winner[closer] = k
            rgb[closer] = np.asarray(prim.albedo)
        for k, prim in enumerate(spec.primitives):
            if isinstance(prim, Plane) and prim.texture != 0.0:
                mask = winner == k
                if np.any(mask):
                    hits = origin + depth[mask, None] * dirs[mask]
                    rgb[mask] = prim.albedo_at(hits)
        miss = ~np.isfinite(depth)
        depth[miss] = np.nan
        if depth_noise > 0:
            if rng is None:
                rng = np.random.default_rng(spec.seed)
            noisy = depth + rng.normal(0.0, depth_noise, size=depth.shape)
            depth = np.where(miss, np.nan, np.maximum(noisy, 1e-6))
        frames.append(CameraFrame(rgb=rgb, depth=depth, intrinsics=intr,
                                  extrinsic=extrinsic))
    return frames


def surface_distance(spec: SceneSpec, points: np.ndarray) -> np.ndarray:
    """Distance from each point to the nearest primitive surface."""
    points = np.atleast_2d(points)
    best = np.full(points.shape[0], np.inf)
    for prim in spec.primitives:
        if isinstance(prim, Plane):
            d = np.abs(points[:, 2] - prim.z)
        elif isinstance(prim, Sphere):
            d = np.abs(np.linalg.norm(points - np.asarray(prim.center), axis=1)
                       - prim.radius)
        else:
            q = np.abs(points - np.asarray(prim.center)) - np.asarray(prim.half_extents)
            outside = np.linalg.norm(np.maximum(q, 0.0), axis=1)
            inside = np.minimum(q.max(axis=1), 0.0)
            d = np.abs(outside + inside)
        best = np.minimum(best, d)
    return best


def look_at(eye, target, up=(0.0, 0.0, 1.0)) -> RigidTransform:
    """Camera->base pose with the optical axis pointing at ``target``."""
    eye = np.asarray(eye, dtype=np.float64)
    z_axis = np.asarray(target, dtype=np.float64) - eye
    z_axis = z_axis / np.linalg.norm(z_axis)
    up = np.asarray(up, dtype=np.float64)
    if abs(z_axis @ up) > 0.999:  # looking straight along up: pick another
        up = np.array([0.0, 1.0, 0.0])
    x_axis = np.cross(z_axis, up)
    x_axis = x_axis / np.linalg.norm(x_axis)
    y_axis = np.cross(z_axis, x_axis)
    return RigidTransform(np.stack([x_axis, y_axis, z_axis], axis=1), eye)


def rotation_about_z(angle: float) -> np.ndarray:
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def rotate_camera(extrinsic: RigidTransform, pivot, angle: float) -> RigidTransform:
    """Rotate a camera pose about the vertical axis through ``pivot``."""
    pivot = np.asarray(pivot, dtype=np.float64)
    rot = RigidTransform(rotation_about_z(angle),
                         pivot - rotation_about_z(angle) @ pivot)
    return rot.compose(extrinsic)


# ---------------------------------------------------------------------------
# Scripted reach task

RED = (0.9, 0.1, 0.1)
BLUE = (0.1, 0.1, 0.9)
TABLE_GRAY = (0.5, 0.5, 0.5)
DISTRACTOR_GREEN = (0.1, 0.8, 0.1)

INSTRUCTION_RED = "reach red sphere"
INSTRUCTION_BLUE = "reach blue sphere"


@dataclass(frozen=True, eq=False)
class Episode:
    spec: SceneSpec
    frames: list            # rendered CameraFrames
    proprio: Proprioception
    language: str
    chunk: np.ndarray        # (H, 4): unit xyz delta toward target + gripper
    target: np.ndarray       # (3,) ground-truth target center


@dataclass(eq=False)
class ReachDataset:
    episodes: list
    image_size: int
    chunk_length: int
    seed: int

    def __len__(self):
        return len(self.episodes)


def default_cameras(image_size: int) -> list:
    intr = CameraIntrinsics(fx=float(image_size), fy=float(image_size),
                            cx=(image_size - 1) / 2.0, cy=(image_size - 1) / 2.0,
                            width=image_size, height=image_size)
    return [
        (intr, look_at((0.9, 0.9, 0.9), (0.0, 0.0, 0.0))),
        (intr, look_at((-0.9, 0.6, 0.8), (0.0, 0.0, 0.05))),
    ]


def _random_ee_pose(rng: np.random.Generator) -> RigidTransform:
    # Gripper above the table pointing down: EE +z runs toward the scene.
    # Orientation is fixed (position-only randomization), matching a
    # top-down gripper with delta-position actions.
    flip = np.array([[1.0, 0.0, 0.0], [0.0, -1.0, 0.0], [0.0, 0.0, -1.0]])
    position = np.array([rng.uniform(-0.25, 0.25), rng.uniform(-0.25, 0.25),
                         rng.uniform(0.25, 0.4)])
    return RigidTransform(flip, position)


def make_reach_scene(rng: np.random.Generator, image_size: int = 64,
                     cameras=None) -> tuple[SceneSpec, np.ndarray, np.ndarray]:
    """One randomized tabletop; returns (spec, red_center, blue_center)."""
    radius = 0.08
    def sample_center():
        return np.array([rng.uniform(-0.35, 0.35), rng.uniform(-0.35, 0.35), radius])

    red_center = sample_center()
    blue_center = sample_center()
    while np.linalg.norm(blue_center - red_center) < 3 * radius:
        blue_center = sample_center()
    distractor = np.array([rng.uniform(-0.35, 0.35), rng.uniform(-0.35, 0.35), 0.04])
    spec = SceneSpec(
        primitives=[
            Plane(0.0, TABLE_GRAY, texture=0.3),
            Sphere(tuple(red_center), radius, RED),
            Sphere(tuple(blue_center), radius, BLUE),
            Box(tuple(distractor), (0.05, 0.05, 0.04), DISTRACTOR_GREEN),
        ],
        cameras=cameras if cameras is not None else default_cameras(image_size),
        ee_pose=_random_ee_pose(rng),
        seed=int(rng.integers(0, 2 ** 31)),
    )
    return spec, red_center, blue_center


def expert_chunk(ee_position: np.ndarray, target: np.ndarray,
                 chunk_length: int) -> np.ndarray:
    """Straight-line normalized delta toward the target; the gripper
    channel closes as the end effector gets near."""
    delta = target - ee_position
    norm = np.linalg.norm(delta)
    direction = np.zeros(3) if norm < 1e-12 else delta / norm
    chunk = np.zeros((chunk_length, 4))
    chunk[:, :3] = direction
    chunk[:, 3] = np.clip(1.0 - norm, 0.0, 1.0)
    return chunk


def make_reach_task(n_episodes: int, seed: int = 0, image_size: int = 64,
                    chunk_length: int = 8, cameras=None) -> ReachDataset:
    if n_episodes < 1:
        raise ConfigError("n_episodes must be >= 1")
    rng = np.random.default_rng(seed)
    episodes = []
    for _ in range(n_episodes):
        spec, red_center, blue_center = make_reach_scene(rng, image_size, cameras)
        language = INSTRUCTION_RED if rng.uniform() < 0.5 else INSTRUCTION_BLUE
        target = red_center if language == INSTRUCTION_RED else blue_center
        proprio = Proprioception(ee_pose=spec.ee_pose,
                                 gripper_state=float(rng.uniform()))
        chunk = expert_chunk(spec.ee_pose.translation, target, chunk_length)
        episodes.append(Episode(spec=spec, frames=render(spec), proprio=proprio,
                                language=language, chunk=chunk, target=target))
    return ReachDataset(episodes=episodes, image_size=image_size,
                        chunk_length=chunk_length, seed=seed)


def save_dataset(dataset: ReachDataset, directory) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    manifest = {
        "image_size": dataset.image_size,
        "chunk_length": dataset.chunk_length,
        "seed": dataset.seed,
        "episodes": [],
    }
    for i, ep in enumerate(dataset.episodes):
        entry = {
            "spec": ep.spec.to_json(),
            "language": ep.language,
            "gripper_state": ep.proprio.gripper_state,
            "target": [float(v) for v in ep.target],
            "files": {},
        }
        for c, frame in enumerate(ep.frames):
            rgb_name = f"ep{i:04d}_cam{c}_rgb.a3rt"
            depth_name = f"ep{i:04d}_cam{c}_depth.a3rt"
            tensorio.save_tensor(directory / rgb_name, frame.rgb)
            tensorio.save_tensor(directory / depth_name, frame.depth)
            entry["files"][f"cam{c}"] = {"rgb": rgb_name, "depth": depth_name}
        chunk_name = f"ep{i:04d}_chunk.a3rt"
        tensorio.save_tensor(directory / chunk_name, ep.chunk)
        entry["files"]["chunk"] = chunk_name
        manifest["episodes"].append(entry)
    (directory / "manifest.json").write_text(
        json.dumps(manifest, indent=2, sort_keys=True) + "\n"
    )


def load_dataset(directory) -> ReachDataset:
    directory = Path(directory)
    manifest = json.loads((directory / "manifest.json").read_text())
    episodes = []
    for entry in manifest["episodes"]:
        spec = SceneSpec.from_json(entry["spec"])
        frames = []
        for c, (intr, ext) in enumerate(spec.cameras):
            rgb = tensorio.load_tensor(directory / entry["files"][f"cam{c}"]["rgb"])
            depth = tensorio.load_tensor(directory / entry["files"][f"cam{c}"]["depth"])
            frames.append(CameraFrame(rgb=rgb, depth=depth, intrinsics=intr,
                                      extrinsic=ext))
        chunk = tensorio.load_tensor(directory / entry["files"]["chunk"])
        proprio = Proprioception(ee_pose=spec.ee_pose,
                                 gripper_state=entry["gripper_state"])
        episodes.append(Episode(spec=spec, frames=frames, proprio=proprio,
                                language=entry["language"], chunk=chunk,
                                target=np.asarray(entry["target"])))
    return ReachDataset(episodes=episodes, image_size=manifest["image_size"],
                        chunk_length=manifest["chunk_length"],
                        seed=manifest["seed"])
