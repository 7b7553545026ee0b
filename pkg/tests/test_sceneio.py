"""PNG codecs and the scene directory round trip.

The depth PNG stores codes on a 16-bit grid over [0, max_depth], so a
round trip may move a value by at most one quantum (300/65536 m at the
default range). RGB PNGs are bit-exact for colors already on the 8-bit
grid, which covers everything the pipeline itself writes.
"""

from __future__ import annotations

import json

import numpy as np
import pytest

from scapegeom import (
    CameraIntrinsics,
    CopyThroughGenerator,
    CorruptManifest,
    DepthCodecConfig,
    MissingFile,
    Pose,
    RgbdImage,
    Trajectory,
    VisibilityMask,
    generate_scene,
    load_depth_png,
    load_mask_png,
    load_rgb_png,
    read_scene,
    save_depth_png,
    save_mask_png,
    save_rgb_png,
    write_scene,
)

QUANTUM = 300.0 / 65536.0


class TestPngCodecs:
    def test_rgb_on_grid_round_trip(self, rng, tmp_path):
        rgb = rng.integers(0, 256, size=(9, 7, 3)).astype(np.float64) / 255.0
        path = tmp_path / "c.png"
        save_rgb_png(path, rgb)
        assert np.array_equal(load_rgb_png(path), rgb)

    def test_rgb_off_grid_lands_on_nearest(self, tmp_path):
        rgb = np.full((2, 2, 3), 0.5)  # 127.5 rounds half-up to 128
        path = tmp_path / "c.png"
        save_rgb_png(path, rgb)
        assert np.array_equal(load_rgb_png(path), np.full((2, 2, 3), 128 / 255))

    def test_depth_round_trip_within_quantum(self, rng, tmp_path):
        depth = rng.uniform(0.0, 300.0, size=(11, 13))
        depth[0, 0] = 0.0
        depth[0, 1] = 300.0
        path = tmp_path / "d.png"
        save_depth_png(path, depth)
        back = load_depth_png(path)
        assert np.abs(back - depth).max() <= QUANTUM
        assert back[0, 0] == 0.0
        assert back[0, 1] == 300.0

    def test_depth_custom_range(self, tmp_path):
        codec = DepthCodecConfig(max_depth=80.0)
        depth = np.array([[0.0, 40.0, 80.0]])
        path = tmp_path / "d.png"
        save_depth_png(path, depth, codec)
        back = load_depth_png(path, codec)
        assert np.abs(back - depth).max() <= 80.0 / 65536.0

    def test_mask_round_trip(self, rng, tmp_path):
        mask = VisibilityMask((rng.random((6, 10)) < 0.5).astype(np.uint8))
        path = tmp_path / "m.png"
        save_mask_png(path, mask)
        assert np.array_equal(load_mask_png(path).mask != 0, mask.mask != 0)

    def test_missing_file_raises_with_name(self, tmp_path):
        target = tmp_path / "absent.png"
        with pytest.raises(MissingFile) as info:
            load_rgb_png(target)
        assert "absent.png" in str(info.value)


def _scene(rng, keyframes=(0, 2)):
    intr = CameraIntrinsics(fx=20.0, fy=20.0, cx=7.5, cy=5.5, width=16, height=12)
    poses = tuple(Pose(np.eye(3), np.array([0.0, 0.0, float(i)])) for i in range(3))
    traj = Trajectory(poses, intr)
    rgb = rng.integers(0, 256, size=(12, 16, 3)).astype(np.float64) / 255.0
    image = RgbdImage(rgb, np.full((12, 16), 30.0))
    return generate_scene(image, traj.camera(0), traj, list(keyframes), CopyThroughGenerator())


class TestSceneRoundTrip:
    def test_directory_layout(self, rng, tmp_path):
        state = _scene(rng)
        manifest_path = write_scene(state, tmp_path / "scene")
        assert manifest_path.name == "scene.json"
        names = {p.name for p in manifest_path.parent.iterdir()}
        assert {"scene.json", "cloud.ply", "keyframe_0000_rgb.png",
                "keyframe_0002_depth.png", "keyframe_0002_mask.png"} <= names

    def test_round_trip_preserves_content(self, rng, tmp_path):
        state = _scene(rng)
        write_scene(state, tmp_path / "scene")
        back = read_scene(tmp_path / "scene")
        assert back.visit_order == state.visit_order
        assert len(back.keyframes) == len(state.keyframes)
        for orig, loaded in zip(state.keyframes, back.keyframes):
            assert loaded.index == orig.index
            assert loaded.bundle is None
            assert np.array_equal(loaded.image.rgb, orig.image.rgb)
            assert np.abs(loaded.image.depth - orig.image.depth).max() <= QUANTUM
            assert loaded.warp_loss_value == orig.warp_loss_value
            np.testing.assert_array_equal(
                loaded.camera.pose.translation, orig.camera.pose.translation
            )
        np.testing.assert_array_equal(
            back.cloud.positions, state.cloud.positions.astype(np.float32).astype(np.float64)
        )

    def test_manifest_file_path_also_accepted(self, rng, tmp_path):
        state = _scene(rng)
        manifest_path = write_scene(state, tmp_path / "scene")
        back = read_scene(manifest_path)
        assert len(back.keyframes) == len(state.keyframes)

    def test_initial_only_scene(self, rng, tmp_path):
        state = _scene(rng, keyframes=())
        write_scene(state, tmp_path / "scene")
        back = read_scene(tmp_path / "scene")
        assert len(back.keyframes) == 1
        assert back.visit_order == ()

    def test_missing_keyframe_image_names_the_file(self, rng, tmp_path):
        state = _scene(rng)
        write_scene(state, tmp_path / "scene")
        victim = tmp_path / "scene" / "keyframe_0002_rgb.png"
        victim.unlink()
        with pytest.raises(MissingFile) as info:
            read_scene(tmp_path / "scene")
        assert "keyframe_0002_rgb.png" in str(info.value)

    def test_missing_manifest(self, tmp_path):
        with pytest.raises(MissingFile):
            read_scene(tmp_path)

    def test_corrupt_json(self, tmp_path):
        (tmp_path / "scene.json").write_text("{not json")
        with pytest.raises(CorruptManifest):
            read_scene(tmp_path)

    def test_wrong_format_marker(self, tmp_path):
        (tmp_path / "scene.json").write_text(json.dumps({"format": "other", "version": 1}))
        with pytest.raises(CorruptManifest):
            read_scene(tmp_path)
