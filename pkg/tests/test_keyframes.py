"""Keyframe selection, visit ordering, and the generation loop.

Hand-derived anchors:
  - 31 poses spaced 1 m on a line, beta=10, gamma=20: the scan fires at
    10, 20, 30 m -> [0, 10, 20, 30]; the final pose is already selected
  - 13 poses yawing 5 deg each, same thresholds: 20/5 = every 4th pose
    -> [0, 4, 8, 12]
  - collinear keyframes at 0/10/20/30 m with the start at 0 m: the
    visit chain runs from the far end back: [30, 20, 10, 0] (indices)
"""

from __future__ import annotations

import math

import numpy as np
import pytest

from scapegeom import (
    Camera,
    CameraIntrinsics,
    CopyThroughGenerator,
    GeneratorFailure,
    KeyframeSelectionConfig,
    OutOfRangeValue,
    Pose,
    RgbdImage,
    Trajectory,
    generate_scene,
    order_viewpoints,
    rotation_angle_degrees,
    select_keyframes,
)

from conftest import random_rotation


def _intr(width=16, height=12):
    return CameraIntrinsics(
        fx=20.0, fy=20.0, cx=(width - 1) / 2.0, cy=(height - 1) / 2.0, width=width, height=height
    )


def _line_trajectory(n: int, spacing: float = 1.0) -> Trajectory:
    poses = tuple(Pose(np.eye(3), np.array([0.0, 0.0, i * spacing])) for i in range(n))
    return Trajectory(poses, _intr())


def _yaw(deg: float) -> np.ndarray:
    c, s = math.cos(math.radians(deg)), math.sin(math.radians(deg))
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def _yaw_trajectory(n: int, step_deg: float) -> Trajectory:
    poses = tuple(Pose(_yaw(i * step_deg), np.zeros(3)) for i in range(n))
    return Trajectory(poses, _intr())


class TestRotationAngle:
    def test_identity_gives_zero(self):
        assert rotation_angle_degrees(np.eye(3), np.eye(3)) == 0.0

    def test_yaw_angles_recovered(self):
        for deg in (5.0, 20.0, 90.0, 179.0):
            got = rotation_angle_degrees(np.eye(3), _yaw(deg))
            assert got == pytest.approx(deg, abs=1e-9)


class TestSelectKeyframes:
    def test_single_pose(self):
        assert select_keyframes(_line_trajectory(1)) == [0]

    def test_metric_line_anchor(self):
        assert select_keyframes(_line_trajectory(31)) == [0, 10, 20, 30]

    def test_rotation_anchor(self):
        assert select_keyframes(_yaw_trajectory(13, 5.0)) == [0, 4, 8, 12]

    def test_final_pose_force_appended(self):
        # 25 poses: scan fires at 10 and 20, then 24 is appended
        assert select_keyframes(_line_trajectory(25)) == [0, 10, 20, 24]

    def test_threshold_is_inclusive(self):
        traj = _line_trajectory(11, spacing=1.0)  # pose 10 sits at exactly 10 m
        assert select_keyframes(traj, KeyframeSelectionConfig(beta=10.0)) == [0, 10]

    def test_config_bounds(self):
        with pytest.raises(OutOfRangeValue):
            KeyframeSelectionConfig(beta=0.0)
        with pytest.raises(OutOfRangeValue):
            KeyframeSelectionConfig(gamma=180.0)

    def test_spacing_property_on_random_walks(self, rng):
        cfg = KeyframeSelectionConfig(beta=2.0, gamma=25.0)
        poses = [Pose(np.eye(3), np.zeros(3))]
        for _ in range(60):
            step = rng.uniform(-0.9, 0.9, size=3)
            rot = _yaw(float(rng.uniform(-10, 10)))
            poses.append(Pose(rot @ poses[-1].rotation, poses[-1].translation + step))
        traj = Trajectory(tuple(poses), _intr())
        picked = select_keyframes(traj, cfg)
        assert picked[0] == 0 and picked[-1] == len(poses) - 1
        assert picked == sorted(set(picked))
        # every pair except the force-appended final satisfies a threshold
        for a, b in zip(picked[:-2], picked[1:-1]):
            dist = np.linalg.norm(traj.poses[b].translation - traj.poses[a].translation)
            ang = rotation_angle_degrees(traj.poses[a].rotation, traj.poses[b].rotation)
            assert dist >= cfg.beta - 1e-9 or ang >= cfg.gamma - 1e-9


class TestOrderViewpoints:
    def test_collinear_reverse_chain(self):
        traj = _line_trajectory(31)
        start = traj.camera(0)
        assert order_viewpoints(traj, [0, 10, 20, 30], start) == [30, 20, 10, 0]

    def test_single_keyframe(self):
        traj = _line_trajectory(5)
        assert order_viewpoints(traj, [2], traj.camera(0)) == [2]

    def test_equidistant_tie_prefers_lower_index(self):
        # keyframe 2 sits at (1,0,1); keyframes 0 and 1 are both sqrt(2) away
        poses = (
            Pose(np.eye(3), np.array([0.0, 0.0, 0.0])),
            Pose(np.eye(3), np.array([2.0, 0.0, 0.0])),
            Pose(np.eye(3), np.array([1.0, 0.0, 1.0])),
        )
        traj = Trajectory(poses, _intr())
        order = order_viewpoints(traj, [0, 1, 2], traj.camera(0))
        assert order == [2, 0, 1]

    def test_without_start_camera_begins_at_last(self):
        traj = _line_trajectory(31)
        assert order_viewpoints(traj, [0, 10, 20, 30])[0] == 30


def _flat_scene_image(intr: CameraIntrinsics, rng) -> RgbdImage:
    rgb = rng.integers(0, 256, size=(intr.height, intr.width, 3)).astype(np.float64) / 255.0
    depth = np.full((intr.height, intr.width), 30.0)
    return RgbdImage(rgb, depth)


class TestGenerateScene:
    def test_empty_keyframe_list_keeps_initial_only(self, rng):
        traj = _line_trajectory(3)
        image = _flat_scene_image(traj.intrinsics, rng)
        state = generate_scene(image, traj.camera(0), traj, [], CopyThroughGenerator())
        assert len(state.keyframes) == 1
        assert state.visit_order == ()
        assert len(state.cloud) == image.depth.size

    def test_stub_loop_has_zero_warp_loss(self, rng):
        traj = _line_trajectory(5)
        image = _flat_scene_image(traj.intrinsics, rng)
        state = generate_scene(image, traj.camera(0), traj, [0, 2, 4], CopyThroughGenerator())
        for rec in state.keyframes:
            if rec.bundle is not None and rec.warp_loss_value is not None:
                assert rec.warp_loss_value == 0.0

    def test_cloud_grows_by_valid_pixels_each_step(self, rng):
        traj = _line_trajectory(4)
        image = _flat_scene_image(traj.intrinsics, rng)
        state = generate_scene(image, traj.camera(0), traj, [0, 3], CopyThroughGenerator())
        per_frame = image.depth.size  # stub outputs have depth > 0 everywhere
        assert len(state.cloud) == sum(
            int((rec.image.depth > 0).sum()) for rec in state.keyframes
        )
        assert len(state.cloud) == 2 * per_frame

    def test_initial_keyframe_never_regenerated(self, rng):
        traj = _line_trajectory(3)
        image = _flat_scene_image(traj.intrinsics, rng)
        state = generate_scene(image, traj.camera(0), traj, [0, 2], CopyThroughGenerator())
        initial = state.keyframe(0)
        assert initial.bundle is None
        assert np.array_equal(initial.image.rgb, image.rgb)

    def test_identical_viewpoints_give_full_second_mask(self, rng):
        # poses 1 and 2 coincide; the second visit re-renders a frame
        # whose every pixel was just filled at the same viewpoint
        poses = (
            Pose(np.eye(3), np.zeros(3)),
            Pose(np.eye(3), np.array([0.0, 0.0, 1.0])),
            Pose(np.eye(3), np.array([0.0, 0.0, 1.0])),
        )
        traj = Trajectory(poses, _intr())
        image = _flat_scene_image(traj.intrinsics, rng)
        state = generate_scene(image, traj.camera(0), traj, [0, 1, 2], CopyThroughGenerator())
        second = state.keyframes[-1]
        first = state.keyframes[-2]
        assert second.bundle.mask.mask.all()
        assert np.array_equal(second.bundle.mask.mask != 0, first.image.depth > 0)

    def test_determinism(self, rng):
        traj = _line_trajectory(4)
        image = _flat_scene_image(traj.intrinsics, rng)
        a = generate_scene(image, traj.camera(0), traj, [0, 3], CopyThroughGenerator())
        b = generate_scene(image, traj.camera(0), traj, [0, 3], CopyThroughGenerator())
        assert np.array_equal(a.cloud.positions, b.cloud.positions)
        for ra, rb in zip(a.keyframes, b.keyframes):
            assert np.array_equal(ra.image.rgb, rb.image.rgb)
            assert np.array_equal(ra.image.depth, rb.image.depth)

    def test_generator_failure_carries_index(self, rng):
        class Boom:
            def generate(self, bundle, camera, controls=None):
                raise RuntimeError("no weights")

        traj = _line_trajectory(3)
        image = _flat_scene_image(traj.intrinsics, rng)
        with pytest.raises(GeneratorFailure) as info:
            generate_scene(image, traj.camera(0), traj, [0, 2], Boom())
        assert info.value.keyframe_index == 2

    def test_start_camera_must_be_endpoint(self, rng):
        traj = _line_trajectory(3)
        image = _flat_scene_image(traj.intrinsics, rng)
        from scapegeom import ValidationError

        with pytest.raises(ValidationError):
            generate_scene(image, traj.camera(1), traj, [0, 2], CopyThroughGenerator())
