import numpy as np
import pytest

from bevkit.geometry import CameraIntrinsics, RigidTransform, warp_to_source
from bevkit.scene import (
    BoxSpec,
    PlaneSpec,
    SceneError,
    SceneSpec,
    evaluate_surface_features,
    make_pair,
    render,
    scene_surfaces,
)

K = CameraIntrinsics(fx=160.0, fy=160.0, cx=47.5, cy=31.5, width=96, height=64)
IDENTITY = RigidTransform.identity()


def single_plane_scene(z=10.0, extent=(40.0, 30.0), velocity=(0.0, 0.0, 0.0)):
    return SceneSpec(
        objects=(PlaneSpec(center=(0.0, 0.0, z), extent=extent, signature_seed=5,
                           velocity=velocity),),
        d_min=2.0, d_max=58.0, seed=9,
    )


class TestRender:
    def test_fronto_parallel_plane_has_uniform_exact_depth(self):
        frame = render(single_plane_scene(z=10.0), K, IDENTITY)
        assert np.all(frame.mask)
        assert np.abs(frame.depth_gt - 10.0).max() < 1e-9

    def test_depth_matches_analytic_ray_plane_intersection(self):
        # Slanted plane: z = 12 + 0.2x + 0.1y in world coordinates. A ray
        # through pixel (u, v) has x = z(u-cx)/fx, y = z(v-cy)/fy, so the
        # analytic hit depth solves z = 12 / (1 - 0.2(u-cx)/fx - 0.1(v-cy)/fy).
        pitch = np.rad2deg(np.arctan(0.2))
        roll = np.rad2deg(np.arctan(0.1))
        # local z axis must be (-0.2, -0.1, 1)/|.| : rotate about y then x
        spec = SceneSpec(
            objects=(PlaneSpec(center=(0.0, 0.0, 12.0), extent=(60.0, 45.0),
                               rpy_deg=(-roll, pitch, 0.0), signature_seed=1),),
            d_min=2.0, d_max=58.0, seed=1,
        )
        frame = render(spec, K, IDENTITY)
        us, vs = np.meshgrid(np.arange(96.0), np.arange(64.0))
        surfaces = scene_surfaces(spec)
        normal = np.cross(surfaces[0].e1, surfaces[0].e2)
        dirs = np.stack([(us - K.cx) / K.fx, (vs - K.cy) / K.fy, np.ones_like(us)], -1)
        analytic = np.dot(surfaces[0].center, normal) / (dirs @ normal)
        on_plane = frame.mask
        assert np.abs(frame.depth_gt - analytic)[on_plane].max() < 1e-9

    def test_sky_pixels_carry_zero_depth_and_features(self):
        frame = render(single_plane_scene(extent=(2.0, 2.0)), K, IDENTITY)
        sky = ~frame.mask
        assert np.any(sky)
        assert np.all(frame.depth_gt[sky] == 0)
        assert np.all(frame.feature[sky] == 0)
        assert np.all(frame.object_ids[sky] == -1)

    def test_empty_scene_renders_all_zero_depth(self):
        frame = render(SceneSpec(objects=(), d_min=2, d_max=58, seed=0), K, IDENTITY)
        assert np.all(frame.depth_gt == 0)

    def test_determinism_bit_identical(self):
        spec = single_plane_scene()
        a = render(spec, K, IDENTITY)
        b = render(spec, K, IDENTITY)
        assert np.array_equal(a.feature, b.feature)
        assert np.array_equal(a.depth_gt, b.depth_gt)

    def test_moving_plane_footprint_shifts_by_velocity_times_t(self):
        spec = single_plane_scene(z=10.0, extent=(4.0, 30.0), velocity=(1.0, 0.0, 0.0))
        t0 = render(spec, K, IDENTITY, t=0.0)
        t2 = render(spec, K, IDENTITY, t=2.0)
        # 2 m at 10 m depth is 32 px with fx=160
        col0 = np.where(t0.mask.any(axis=0))[0]
        col2 = np.where(t2.mask.any(axis=0))[0]
        assert col2[0] - col0[0] == 32

    def test_occlusion_keeps_nearest_surface(self):
        spec = SceneSpec(
            objects=(
                PlaneSpec(center=(0.0, 0.0, 12.0), extent=(40.0, 30.0), signature_seed=1),
                PlaneSpec(center=(0.0, 0.0, 6.0), extent=(2.0, 2.0), signature_seed=2),
            ),
            d_min=2.0, d_max=58.0, seed=3,
        )
        frame = render(spec, K, IDENTITY)
        center = frame.depth_gt[32, 48]
        assert center == pytest.approx(6.0)
        assert frame.object_ids[32, 48] == 1

    def test_hits_outside_depth_range_raise(self):
        with pytest.raises(SceneError):
            render(single_plane_scene(z=1.0), K, IDENTITY)

    def test_box_renders_front_face(self):
        spec = SceneSpec(
            objects=(BoxSpec(center=(0.0, 0.0, 10.0), extent=(2.0, 1.5, 3.0),
                             signature_seed=4),),
            d_min=2.0, d_max=58.0, seed=0,
        )
        frame = render(spec, K, IDENTITY)
        # nearest face of the box sits at z = 10 - 3/2
        assert frame.depth_gt[32, 48] == pytest.approx(8.5)


class TestFeatureViewInvariance:
    def test_same_surface_point_same_feature_from_two_poses(self):
        spec = single_plane_scene(z=8.0)
        pose_a = IDENTITY
        pose_b = RigidTransform(np.eye(3), np.array([-0.4, 0.1, 0.0]))
        frame_a = render(spec, K, pose_a)
        frame_b = render(spec, K, pose_b)
        surfaces = scene_surfaces(spec)

        # World points seen by A, via its exact depths.
        us, vs = np.meshgrid(np.arange(96.0), np.arange(64.0))
        cam_pts = np.stack([(us - K.cx) / K.fx * frame_a.depth_gt,
                            (vs - K.cy) / K.fy * frame_a.depth_gt,
                            frame_a.depth_gt], axis=-1)
        world = pose_a.inverse().apply(cam_pts.reshape(-1, 3))

        direct = evaluate_surface_features(spec, 0.0, world, 0, surfaces)
        assert np.abs(direct.reshape(64, 96, -1) - frame_a.feature).max() < 1e-9

        # The same physical points, evaluated for the B view, are identical;
        # and where they land on B's grid exactly, B's stored features agree.
        direct_b = evaluate_surface_features(spec, 0.0, world, 0, surfaces)
        assert np.abs(direct_b - direct).max() < 1e-6

    def test_warped_ground_truth_is_consistent_across_views(self):
        spec = single_plane_scene(z=8.0)
        src_pose = RigidTransform(np.eye(3), np.array([-0.5, 0.0, 0.0]))
        ref, src, m = make_pair(spec, K, IDENTITY, src_pose, dt=0.0)
        us, vs = np.meshgrid(np.arange(96.0), np.arange(64.0))
        warped = warp_to_source(K, K, m, us, vs, ref.depth_gt)
        ok = warped.valid & ref.mask
        ui = np.rint(warped.u[ok]).astype(int).clip(0, 95)
        vi = np.rint(warped.v[ok]).astype(int).clip(0, 63)
        covisible = src.depth_gt[vi, ui] > 0
        diff = np.abs(warped.z[ok][covisible] - src.depth_gt[vi, ui][covisible])
        assert diff.max() < 1e-4


class TestMakePair:
    def test_identical_poses_give_identity_transform(self):
        spec = single_plane_scene()
        _, _, m = make_pair(spec, K, IDENTITY, IDENTITY, dt=0.0)
        assert np.allclose(m.rotation, np.eye(3))
        assert np.allclose(m.translation, 0)

    def test_relative_transform_composition(self):
        spec = single_plane_scene()
        rng = np.random.default_rng(11)
        from conftest import random_rigid_transform
        ref_pose = random_rigid_transform(rng, max_angle=0.05, max_translation=0.2)
        src_pose = random_rigid_transform(rng, max_angle=0.05, max_translation=0.2)
        _, _, m = make_pair(spec, K, ref_pose, src_pose, dt=0.0)
        expected = src_pose.compose(ref_pose.inverse())
        assert np.allclose(m.rotation, expected.rotation)
        assert np.allclose(m.translation, expected.translation)

    def test_moving_object_violates_warp_consistency_by_its_displacement(self):
        # Static cameras, one plane moving 2 m/s for 0.5 s: the object's old
        # pixels now see whatever is behind it, so the warped (identity)
        # depth disagrees with the source render exactly on those pixels.
        spec = SceneSpec(
            objects=(
                PlaneSpec(center=(0.0, 0.0, 12.0), extent=(40.0, 30.0), signature_seed=1),
                PlaneSpec(center=(0.0, 0.0, 6.0), extent=(1.5, 1.5), signature_seed=2,
                          velocity=(2.0, 0.0, 0.0)),
            ),
            d_min=2.0, d_max=58.0, seed=3,
        )
        ref, src, m = make_pair(spec, K, IDENTITY, IDENTITY, dt=0.5)
        moved = ref.object_ids == 1
        # identity warp: compare ref depth against src depth at the same pixel
        vacated = moved & (src.object_ids != 1)
        assert np.any(vacated)
        diff = np.abs(src.depth_gt - ref.depth_gt)[vacated]
        assert diff.min() > 5.0  # background at 12 vs object at 6


class TestSceneSerialization:
    def test_yaml_round_trip(self):
        spec = SceneSpec(
            objects=(
                PlaneSpec(center=(1.0, 2.0, 10.0), extent=(3.0, 4.0), signature_seed=7,
                          velocity=(0.5, 0.0, 0.0), wavelengths=(0.3, 0.6)),
                BoxSpec(center=(0.0, 0.0, 20.0), extent=(2.0, 2.0, 2.0),
                        rpy_deg=(0.0, 0.0, 45.0), signature_seed=8),
            ),
            d_min=2.0, d_max=58.0, seed=13, channels=8,
        )
        restored = SceneSpec.from_yaml(spec.to_yaml())
        assert restored == spec

    def test_rejects_unknown_schema_version(self):
        with pytest.raises(SceneError):
            SceneSpec.from_dict({"schema_version": 99, "d_min": 2, "d_max": 58})

    def test_rejects_unknown_object_kind(self):
        with pytest.raises(SceneError):
            SceneSpec.from_dict({
                "schema_version": 1, "d_min": 2, "d_max": 58,
                "objects": [{"kind": "sphere", "center": [0, 0, 5], "extent": [1, 1]}],
            })

    def test_rejects_bad_depth_range(self):
        with pytest.raises(SceneError):
            SceneSpec(objects=(), d_min=5.0, d_max=3.0)
