"""Acceptance criteria, one test per criterion.

Each test prints a single PASS line with its key measurements (run
pytest with -s to see them); a failed assert means the criterion fails.
Budgets are wall-clock seconds and are asserted, not advisory.
"""

import time
from contextlib import contextmanager

import numpy as np
import pytest

from a3r.cloud import fuse, to_ee_frame
from a3r.backbone import TestBackbone
from a3r.decoders import (Adam, CvaeHead, DiffusionHead, NllHead,
                          ProprioEncoder, TrainConfig, train)
from a3r.encoder import AttentionPool, MaxPool, positional_encode
from a3r.experiments import (camera_sweep_drift, toy_encoder_config,
                             toy_train_config, train_variant)
from a3r.geometry import (CameraIntrinsics, Proprioception, RigidTransform)
from a3r.params import ParamStore
from a3r.pipeline import EncoderConfig, EncoderPipeline
from a3r.sampling import SamplerConfig, farthest_point_sample
from a3r.scenes import (Plane, SceneSpec, Sphere, default_cameras, look_at,
                        make_reach_task, render, rotation_about_z,
                        surface_distance)

from conftest import check_gradients
from test_encoder import pe_oracle
from test_sampling import brute_force_fps, cloud_from


@contextmanager
def criterion(name: str, budget_s: float):
    t0 = time.perf_counter()
    info = {}
    yield info
    elapsed = time.perf_counter() - t0
    detail = "  ".join(f"{k}={v}" for k, v in info.items())
    print(f"PASS {name} ({elapsed:.2f}s < {budget_s:.0f}s)  {detail}")
    assert elapsed < budget_s, f"{name} exceeded its {budget_s}s budget"


def test_formula_fidelity_positional_encoding():
    with criterion("pe-formula-fidelity", 1.0) as info:
        out = positional_encode(np.zeros((1, 3)))
        assert out.shape == (1, 2 * 3 * 10)
        np.testing.assert_array_equal(out[0], np.tile([0.0, 1.0], 30))
        rng = np.random.default_rng(0)
        pts = rng.standard_normal((64, 3))
        diff = np.abs(positional_encode(pts) - pe_oracle(pts, 10)).max()
        assert diff < 1e-12
        info["width"] = out.shape[1]
        info["max_dev"] = f"{diff:.2e}"


def test_formula_fidelity_attention_pooling():
    with criterion("pooling-formula-fidelity", 1.0) as info:
        rng = np.random.default_rng(1)
        store = ParamStore()
        pool = AttentionPool(store, 12, 8, 8, rng)
        worst_sum = 0.0
        for _ in range(10):
            tokens = rng.standard_normal((31, 12))
            enc = pool.forward(tokens)
            worst_sum = max(worst_sum, abs(enc.attention.sum() - 1.0))
            values = pool.value_net.forward(tokens)
            assert np.all(enc.z >= values.min(axis=0) - 1e-12)
            assert np.all(enc.z <= values.max(axis=0) + 1e-12)
            perm = rng.permutation(31)
            assert np.abs(pool.forward(tokens[perm]).z - enc.z).max() < 1e-9
        assert worst_sum < 1e-12
        equal = np.tile(rng.standard_normal(12), (7, 1))
        np.testing.assert_array_equal(pool.forward(equal).attention,
                                      np.full(7, 1.0 / 7))
        info["softmax_sum_dev"] = f"{worst_sum:.2e}"


def test_gradient_suite():
    with criterion("gradient-suite", 30.0) as info:
        n_instances = 20
        worst = 0.0
        chunk_shape = (2, 3)
        for i in range(n_instances):
            rng = np.random.default_rng(100 + i)

            store = ParamStore()
            pool = AttentionPool(store, 6, 4, 5, rng)
            tokens = rng.standard_normal((7, 6))
            probe = rng.standard_normal(5)

            def pool_loss():
                store.zero_grads()
                cache = {}
                enc = pool.forward(tokens, cache)
                pool.backward(probe, cache)
                return float(probe @ enc.z)

            worst = max(worst, check_gradients(pool_loss, store, tol=1e-5))

            store_m = ParamStore()
            mpool = MaxPool(store_m, 6, 5, rng)

            def max_loss():
                store_m.zero_grads()
                cache = {}
                enc = mpool.forward(tokens, cache)
                mpool.backward(probe, cache)
                return float(probe @ enc.z)

            worst = max(worst, check_gradients(max_loss, store_m, tol=1e-5))

            cond = rng.standard_normal(5)
            chunk = rng.standard_normal(chunk_shape)
            for head_cls in (NllHead, DiffusionHead):
                store_h = ParamStore()
                head = head_cls(store_h, 5, chunk_shape, 4,
                                np.random.default_rng(200 + i))

                def head_loss(head=head, store_h=store_h):
                    store_h.zero_grads()
                    value, _ = head.loss_and_grad(cond, chunk,
                                                  np.random.default_rng(7))
                    return value

                worst = max(worst, check_gradients(head_loss, store_h, tol=1e-5))

            store_c = ParamStore()
            cvae = CvaeHead(store_c, cond_dim=5, zu_dim=3,
                            chunk_shape=chunk_shape, hidden=4,
                            rng=np.random.default_rng(300 + i), latent_dim=2)

            def cvae_loss_fn():
                store_c.zero_grads()
                value, _ = cvae.loss_and_grad(cond, chunk,
                                              np.random.default_rng(9))
                return value

            worst = max(worst, check_gradients(cvae_loss_fn, store_c, tol=1e-5))

            store_p = ParamStore()
            penc = ProprioEncoder(store_p, 4, 5, np.random.default_rng(400 + i))
            vec = rng.standard_normal(4)
            pprobe = rng.standard_normal(5)

            def proprio_loss():
                store_p.zero_grads()
                cache = []
                out = penc.forward(vec, cache)
                penc.backward(pprobe, cache)
                return float(pprobe @ out)

            worst = max(worst, check_gradients(proprio_loss, store_p, tol=1e-5))
        info["instances"] = n_instances
        info["worst_rel_err"] = f"{worst:.2e}"


def test_fps_oracle_equivalence():
    with criterion("fps-oracle-equivalence", 10.0) as info:
        rng = np.random.default_rng(42)
        for case in range(50):
            n = int(rng.integers(2, 65))
            p = int(rng.integers(1, 17))
            d = int(rng.integers(1, 8))
            feats = rng.standard_normal((n, d))
            pts = rng.standard_normal((n, 3))
            valid = rng.uniform(size=n) < 0.85
            valid[int(rng.integers(0, n))] = True
            cloud = cloud_from(feats, points=pts, valid=valid)
            for metric, data in (("feature", feats), ("position", pts)):
                got = farthest_point_sample(
                    cloud, SamplerConfig(num_points=p, metric=metric))
                want = brute_force_fps(data, valid, p)
                np.testing.assert_array_equal(got, want, err_msg=f"case {case}")
        # feature metric with features == coordinates equals position metric
        pts = rng.standard_normal((48, 3))
        cloud = cloud_from(pts.copy(), points=pts)
        a = farthest_point_sample(cloud, SamplerConfig(num_points=16,
                                                       metric="feature"))
        b = farthest_point_sample(cloud, SamplerConfig(num_points=16,
                                                       metric="position"))
        np.testing.assert_array_equal(a, b)
        info["instances"] = 50


def test_geometry_invariance():
    with criterion("geometry-invariance", 20.0) as info:
        intr = CameraIntrinsics(fx=64.0, fy=64.0, cx=31.5, cy=31.5,
                                width=64, height=64)
        cams = [(intr, look_at((0.9, 0.7, 1.0), (0.0, 0.0, 0.2))),
                (intr, look_at((-0.8, -0.5, 0.9), (0.0, 0.0, 0.2)))]
        spec = SceneSpec(
            primitives=[Plane(0.0), Sphere((0.1, -0.05, 0.25), 0.2),
                        Sphere((-0.2, 0.15, 0.15), 0.12)],
            cameras=cams, ee_pose=RigidTransform.identity())
        backbone = TestBackbone(feature_dim=8, stride=8, seed=0)
        frames = render(spec)
        cloud = fuse(frames, [backbone.extract(f) for f in frames])
        assert cloud.size == 2 * 8 * 8
        dist = surface_distance(spec, cloud.points[cloud.valid]).max()
        assert dist < 1e-4

        ee = RigidTransform(
            np.array([[1.0, 0, 0], [0, -1.0, 0], [0, 0, -1.0]]),
            np.array([0.05, -0.1, 0.35]))
        shift = RigidTransform(rotation_about_z(1.2),
                               np.array([0.5, -0.6, 0.2]))
        moved = SceneSpec(
            primitives=[Plane(0.2),
                        Sphere(tuple(shift.apply(np.array([0.1, -0.05, 0.25]))), 0.2),
                        Sphere(tuple(shift.apply(np.array([-0.2, 0.15, 0.15]))), 0.12)],
            cameras=[(intr, shift.compose(ext)) for intr, ext in cams],
            ee_pose=shift.compose(ee))
        base_spec = SceneSpec(primitives=spec.primitives, cameras=cams,
                              ee_pose=ee)
        clouds = []
        for sp in (base_spec, moved):
            fr = render(sp)
            cl = fuse(fr, [backbone.extract(f) for f in fr])
            clouds.append(to_ee_frame(cl, Proprioception(sp.ee_pose, 0.5)))
        np.testing.assert_array_equal(clouds[0].valid, clouds[1].valid)
        drift = np.abs(clouds[0].points[clouds[0].valid]
                       - clouds[1].points[clouds[1].valid]).max()
        assert drift < 1e-6
        info["surface_dist"] = f"{dist:.2e}"
        info["ee_frame_drift"] = f"{drift:.2e}"


def test_camera_sweep_stability_ordering():
    # Protocol mirrors the viewpoint experiments: rotate the scene camera
    # about the vertical axis through the EE start by 0.4/1.0/2.0 rad and
    # compare encoding drift of trained variants, averaged over 20 scenes
    # and 5 training seeds (results are seed-averaged like the reference
    # ablation table).
    with criterion("camera-sweep-stability", 600.0) as info:
        dataset = make_reach_task(32, seed=0, image_size=64)
        enc_cfg = toy_encoder_config()
        drifts = {v: [] for v in ("full", "no-eecf", "position-fps")}
        for seed in range(5):
            tc = toy_train_config(epochs=50, seed=seed)
            for variant in drifts:
                pipeline, _ = train_variant(dataset, variant, enc_cfg, tc,
                                            pipeline_seed=seed)
                sweep = camera_sweep_drift(pipeline, n_scenes=20, seed=1234,
                                           image_size=64)
                drifts[variant].append(sweep.mean_drift)
        means = {v: float(np.mean(vals)) for v, vals in drifts.items()}
        assert means["full"] < means["no-eecf"]
        assert means["full"] < means["position-fps"]
        for v, m in means.items():
            info[v] = f"{m:.4f}"


def test_end_to_end_training():
    with criterion("end-to-end-training", 300.0) as info:
        dataset = make_reach_task(32, seed=0, image_size=64)
        cfg = toy_encoder_config()

        def run():
            pipeline = EncoderPipeline(cfg, seed=0)
            q_before = pipeline.store["pool.query"].value.copy()
            result = train(dataset, pipeline, "nll",
                           toy_train_config(epochs=50, seed=0))
            return pipeline, result, q_before

        p1, r1, q_before = run()
        assert r1.steps == 200
        assert r1.epoch_losses[-1] < 0.5 * r1.epoch_losses[0]
        assert np.any(p1.store["pool.query"].value != q_before)
        p2, r2, _ = run()
        assert r1.epoch_losses == r2.epoch_losses
        for name in p1.store.names():
            assert p1.store[name].value.tobytes() == \
                p2.store[name].value.tobytes()
        info["initial"] = f"{r1.epoch_losses[0]:.3f}"
        info["final"] = f"{r1.epoch_losses[-1]:.3f}"


def test_throughput_proxy():
    # Core pipeline without the image backbone: p=512, 2 cameras, d=64,
    # f32. The 44.1 Hz reference rate covers the full system including a
    # GPU image backbone, so the numbers are not directly comparable;
    # the requirement here is >= 30 Hz for the core alone, single thread.
    from threadpoolctl import threadpool_limits

    with criterion("throughput-proxy", 60.0) as info:
        cfg = EncoderConfig(dtype="f32")
        assert cfg.num_points == 512 and cfg.feature_dim == 64
        rng = np.random.default_rng(0)
        from a3r.scenes import make_reach_scene
        spec, _, _ = make_reach_scene(rng, image_size=256,
                                      cameras=default_cameras(256))
        frames = render(spec)
        from a3r.geometry import CameraFrame
        frames = [CameraFrame(rgb=f.rgb.astype(np.float32),
                              depth=f.depth.astype(np.float32),
                              intrinsics=f.intrinsics, extrinsic=f.extrinsic)
                  for f in frames]
        proprio = Proprioception(spec.ee_pose, 0.5)
        pipeline = EncoderPipeline(cfg, seed=0)
        volumes = [pipeline.backbone.extract(f) for f in frames]
        lang = pipeline.backbone.embed_language("benchmark scene")

        def run(timings=None):
            return pipeline.encode(frames, proprio, volumes=volumes,
                                   lang=lang, timings=timings)

        with threadpool_limits(limits=1):
            for _ in range(3):
                run()
            timings = {}
            n = 50
            for _ in range(n):
                run(timings)
        core_stages = ("deproject", "fuse", "crop", "fps", "pe", "pool")
        core_us = sum(timings[k] for k in core_stages) / n
        hz = 1e6 / core_us
        assert hz >= 30.0
        info["core_hz"] = f"{hz:.1f}"
        info["reference_full_system_hz"] = "44.1 (includes GPU backbone)"


def test_hyperparameter_conformance():
    with criterion("hyperparameter-conformance", 5.0) as info:
        enc = EncoderConfig()
        assert enc.embed_dim == 256          # d_e
        assert enc.num_points == 512         # p
        assert enc.pe_frequencies == 10      # L, encoding width 60
        tc = TrainConfig()
        assert tc.lr == 1e-4
        assert tc.weight_decay == 1e-4
        assert tc.batch == 64
        assert tc.grad_clip == 100.0
        assert tc.schedule == "cosine"
        assert tc.epochs == 100
        adam = Adam(ParamStore())
        assert (adam.beta1, adam.beta2, adam.eps) == (0.9, 0.999, 1e-8)
        # dense layers initialize orthogonally
        store = ParamStore()
        AttentionPool(store, 32, 16, 16, np.random.default_rng(0))
        w = store["pool.key.w1"].value  # (32, 16): columns orthonormal
        np.testing.assert_allclose(w.T @ w, np.eye(16), atol=1e-12)
        info["d_e"] = enc.embed_dim
        info["p"] = enc.num_points
        info["lr"] = tc.lr
