import json

import numpy as np
import pytest

from a3r.errors import ConfigError, DimensionMismatch
from a3r.geometry import (CameraFrame, CameraIntrinsics, Proprioception,
                          RigidTransform, calibration_to_json, deproject,
                          invert, load_calibration, parse_calibration,
                          transform_points)

from conftest import random_rotation, random_transform


def project(points, intr):
    """Pinhole projection, test-side oracle for the round trip."""
    u = points[..., 0] * intr.fx / points[..., 2] + intr.cx
    v = points[..., 1] * intr.fy / points[..., 2] + intr.cy
    return u, v


def make_frame(depth, fx=100.0, fy=100.0, cx=None, cy=None):
    h, w = depth.shape
    cx = (w - 1) / 2.0 if cx is None else cx
    cy = (h - 1) / 2.0 if cy is None else cy
    intr = CameraIntrinsics(fx=fx, fy=fy, cx=cx, cy=cy, width=w, height=h)
    rgb = np.zeros((h, w, 3))
    return CameraFrame(rgb=rgb, depth=depth, intrinsics=intr,
                       extrinsic=RigidTransform.identity())


class TestDeproject:
    def test_principal_point_maps_to_optical_axis(self):
        depth = np.full((101, 101), 2.0)
        frame = make_frame(depth, cx=50.0, cy=50.0)
        points, valid = deproject(frame)
        assert valid.all()
        np.testing.assert_array_equal(points[50, 50], [0.0, 0.0, 2.0])

    def test_hand_evaluated_pinhole(self):
        # fx=fy=100, cx=cy=50, pixel (u=150, v=50), depth 1 -> (1, 0, 1)
        depth = np.ones((100, 200))
        frame = make_frame(depth, cx=50.0, cy=50.0)
        points, _ = deproject(frame)
        np.testing.assert_allclose(points[50, 150], [1.0, 0.0, 1.0], atol=1e-12)

    def test_invalid_depth_is_masked_not_zero_point(self):
        depth = np.full((4, 4), 1.5)
        depth[1, 2] = np.nan
        depth[3, 0] = 0.0
        points, valid = deproject(make_frame(depth))
        assert not valid[1, 2] and not valid[3, 0]
        assert valid.sum() == 14

    def test_project_deproject_round_trip(self):
        rng = np.random.default_rng(3)
        depth = rng.uniform(0.5, 3.0, size=(32, 48))
        frame = make_frame(depth, fx=40.0, fy=55.0)
        points, valid = deproject(frame)
        u, v = project(points, frame.intrinsics)
        uu, vv = np.meshgrid(np.arange(48), np.arange(32))
        np.testing.assert_allclose(u[valid], uu[valid], atol=1e-6)
        np.testing.assert_allclose(v[valid], vv[valid], atol=1e-6)


class TestRigidTransform:
    def test_identity_and_translation(self):
        t = RigidTransform(np.eye(3), np.array([1.0, 0.0, 0.0]))
        np.testing.assert_array_equal(transform_points(np.zeros((1, 3)), t),
                                      [[1.0, 0.0, 0.0]])
        ident = RigidTransform.identity()
        pts = np.random.default_rng(0).standard_normal((5, 3))
        np.testing.assert_array_equal(transform_points(pts, ident), pts)

    def test_inverse_of_identity_and_translation(self):
        assert np.allclose(invert(RigidTransform.identity()).matrix(), np.eye(4))
        t = RigidTransform(np.eye(3), np.array([1.0, -2.0, 3.0]))
        np.testing.assert_allclose(invert(t).translation, [-1.0, 2.0, -3.0])

    def test_inverse_round_trip(self):
        rng = np.random.default_rng(7)
        for _ in range(20):
            t = random_transform(rng)
            pts = rng.standard_normal((17, 3))
            back = transform_points(transform_points(pts, t), invert(t))
            np.testing.assert_allclose(back, pts, atol=1e-9)

    def test_inverse_matches_matrix_inverse_oracle(self):
        rng = np.random.default_rng(8)
        for _ in range(10):
            t = random_transform(rng)
            np.testing.assert_allclose(t.inverse().matrix(),
                                       np.linalg.inv(t.matrix()), atol=1e-9)

    def test_compose_group_law(self):
        rng = np.random.default_rng(9)
        a, b = random_transform(rng), random_transform(rng)
        pts = rng.standard_normal((11, 3))
        np.testing.assert_allclose(a.compose(b).apply(pts), a.apply(b.apply(pts)),
                                   atol=1e-12)

    def test_isometry(self):
        rng = np.random.default_rng(10)
        t = random_transform(rng)
        pts = rng.standard_normal((30, 3))
        moved = t.apply(pts)
        d0 = np.linalg.norm(pts[:, None] - pts[None, :], axis=-1)
        d1 = np.linalg.norm(moved[:, None] - moved[None, :], axis=-1)
        np.testing.assert_allclose(d1, d0, atol=1e-9)

    def test_rejects_non_orthonormal(self):
        bad = np.eye(3)
        bad[0, 1] = 1e-3
        with pytest.raises(ConfigError):
            RigidTransform(bad, np.zeros(3))

    def test_rejects_reflection(self):
        refl = np.diag([1.0, 1.0, -1.0])
        with pytest.raises(ConfigError):
            RigidTransform(refl, np.zeros(3))

    def test_from_matrix_reorthonormalizes_small_drift(self):
        rng = np.random.default_rng(11)
        rot = random_rotation(rng)
        m = np.eye(4)
        m[:3, :3] = rot + 2e-4 * rng.standard_normal((3, 3))
        t = RigidTransform.from_matrix(m, reorthonormalize=True)
        np.testing.assert_allclose(t.rotation.T @ t.rotation, np.eye(3), atol=1e-12)
        with pytest.raises(ConfigError):
            RigidTransform.from_matrix(m, reorthonormalize=False)

    def test_from_matrix_rejects_large_drift(self):
        m = np.eye(4)
        m[0, 0] = 1.1
        with pytest.raises(ConfigError):
            RigidTransform.from_matrix(m, reorthonormalize=True)


def test_two_cameras_agree_on_a_shared_surface_point():
    # Both optical axes intersect the plane z=0 at the origin, so the
    # center pixel of each camera deprojects to the same base point.
    from a3r.scenes import Plane, SceneSpec, look_at, render

    intr = CameraIntrinsics(fx=40.0, fy=40.0, cx=16.0, cy=16.0, width=33,
                            height=33)
    cams = [(intr, look_at((0.0, 0.0, 1.0), (0.0, 0.0, 0.0))),
            (intr, look_at((0.8, -0.3, 0.9), (0.0, 0.0, 0.0)))]
    spec = SceneSpec(primitives=[Plane(0.0)], cameras=cams,
                     ee_pose=RigidTransform.identity())
    base_points = []
    for frame in render(spec):
        points, valid = deproject(frame)
        assert valid[16, 16]
        base_points.append(frame.extrinsic.apply(points[16, 16]))
    np.testing.assert_allclose(base_points[0], base_points[1], atol=1e-5)
    np.testing.assert_allclose(base_points[0], [0.0, 0.0, 0.0], atol=1e-5)


class TestValidation:
    def test_camera_frame_shape_mismatch(self):
        intr = CameraIntrinsics(10.0, 10.0, 5.0, 5.0, 16, 16)
        with pytest.raises(DimensionMismatch):
            CameraFrame(rgb=np.zeros((16, 16, 3)), depth=np.zeros((8, 8)),
                        intrinsics=intr, extrinsic=RigidTransform.identity())

    def test_camera_frame_rejects_negative_depth(self):
        depth = np.ones((4, 4))
        depth[0, 0] = -1.0
        with pytest.raises(ConfigError):
            make_frame(depth)

    def test_camera_frame_rejects_rgb_out_of_range(self):
        intr = CameraIntrinsics(10.0, 10.0, 5.0, 5.0, 16, 16)
        with pytest.raises(ConfigError):
            CameraFrame(rgb=np.full((16, 16, 3), 1.5), depth=np.ones((16, 16)),
                        intrinsics=intr, extrinsic=RigidTransform.identity())

    def test_intrinsics_invariants(self):
        with pytest.raises(ConfigError):
            CameraIntrinsics(fx=-1.0, fy=1.0, cx=0.0, cy=0.0, width=4, height=4)
        with pytest.raises(ConfigError):
            CameraIntrinsics(fx=1.0, fy=1.0, cx=10.0, cy=0.0, width=4, height=4)

    def test_gripper_state_range(self):
        with pytest.raises(ConfigError):
            Proprioception(ee_pose=RigidTransform.identity(), gripper_state=1.5)


class TestCalibrationJson:
    def entry(self):
        return {"fx": 50.0, "fy": 50.0, "cx": 32.0, "cy": 32.0,
                "width": 64, "height": 64,
                "extrinsic": list(np.eye(4).reshape(-1))}

    def test_round_trip(self, tmp_path):
        path = tmp_path / "calib.json"
        path.write_text(json.dumps([self.entry(), self.entry()]))
        cams = load_calibration(path)
        assert len(cams) == 2
        back = calibration_to_json(cams)
        assert back[0]["fx"] == 50.0
        np.testing.assert_array_equal(np.asarray(back[0]["extrinsic"]).reshape(4, 4),
                                      np.eye(4))

    def test_unknown_field_rejected(self):
        bad = self.entry()
        bad["distortion"] = [0.1]
        with pytest.raises(ConfigError):
            parse_calibration([bad])

    def test_missing_field_rejected(self):
        bad = self.entry()
        del bad["cy"]
        with pytest.raises(ConfigError):
            parse_calibration([bad])

    def test_empty_rejected(self):
        with pytest.raises(ConfigError):
            parse_calibration([])
