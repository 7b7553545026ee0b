"""Subcommand behavior, exit codes, and file wiring.

Exit code contract: 0 success, 1 domain error (one JSON line on
stderr), 2 usage error from the argument parser.
"""

from __future__ import annotations

import json

import numpy as np
import pytest

from scapegeom import (
    Camera,
    CameraIntrinsics,
    Pose,
    Trajectory,
    load_rgb_png,
    read_scene,
    save_camera,
    save_depth_png,
    save_rgb_png,
    save_trajectory,
)
from scapegeom.cli import run_cli


def _intr(width=16, height=12) -> CameraIntrinsics:
    return CameraIntrinsics(
        fx=20.0, fy=20.0, cx=(width - 1) / 2.0, cy=(height - 1) / 2.0,
        width=width, height=height,
    )


def _line_trajectory(n: int) -> Trajectory:
    poses = tuple(Pose(np.eye(3), np.array([0.0, 0.0, float(i)])) for i in range(n))
    return Trajectory(poses, _intr())


def _write_rgbd(dirpath, rng, depth_value=30.0):
    dirpath.mkdir(parents=True, exist_ok=True)
    rgb = rng.integers(0, 256, size=(12, 16, 3)).astype(np.float64) / 255.0
    save_rgb_png(dirpath / "rgb.png", rgb)
    save_depth_png(dirpath / "depth.png", np.full((12, 16), depth_value))
    return rgb


def _last_json(capsys):
    out = capsys.readouterr().out.strip().splitlines()
    return json.loads(out[-1])


class TestUsageErrors:
    def test_missing_required_flag_exits_2(self, capsys):
        assert run_cli(["select-keyframes"]) == 2

    def test_unknown_command_exits_2(self, capsys):
        assert run_cli(["frobnicate"]) == 2

    def test_sample_requires_seed(self, capsys):
        assert run_cli(["sample"]) == 2


class TestDomainErrors:
    def test_bad_threshold_reports_json_on_stderr(self, tmp_path, capsys):
        save_trajectory(tmp_path / "traj.json", _line_trajectory(3))
        code = run_cli(
            ["select-keyframes", "--trajectory", str(tmp_path / "traj.json"), "--beta", "-1"]
        )
        assert code == 1
        err = json.loads(capsys.readouterr().err.strip())
        assert err["error"] == "OutOfRangeValue"
        assert err["message"]

    def test_missing_input_file_exits_1(self, tmp_path, capsys):
        save_camera(tmp_path / "cam.json", Camera(_intr(), Pose.identity()))
        code = run_cli(
            [
                "backproject",
                "--rgb", str(tmp_path / "nope.png"),
                "--depth", str(tmp_path / "nope2.png"),
                "--camera", str(tmp_path / "cam.json"),
                "--output", str(tmp_path / "c.ply"),
            ]
        )
        assert code == 1
        assert json.loads(capsys.readouterr().err.strip())["error"] == "MissingFile"


class TestSelectKeyframes:
    def test_metric_anchor(self, tmp_path, capsys):
        save_trajectory(tmp_path / "traj.json", _line_trajectory(31))
        assert run_cli(["select-keyframes", "--trajectory", str(tmp_path / "traj.json")]) == 0
        assert _last_json(capsys) == [0, 10, 20, 30]


class TestLossAndFilter:
    def test_identical_frames_have_zero_loss(self, tmp_path, rng, capsys):
        rgb = _write_rgbd(tmp_path, rng)
        from scapegeom import VisibilityMask, save_mask_png

        save_mask_png(tmp_path / "mask.png", VisibilityMask(np.ones((12, 16), dtype=np.uint8)))
        code = run_cli(
            [
                "loss",
                "--rgb-a", str(tmp_path / "rgb.png"),
                "--depth-a", str(tmp_path / "depth.png"),
                "--rgb-b", str(tmp_path / "rgb.png"),
                "--depth-b", str(tmp_path / "depth.png"),
                "--mask", str(tmp_path / "mask.png"),
            ]
        )
        assert code == 0
        payload = _last_json(capsys)
        assert payload["loss"] == 0.0
        assert payload["kept_pixels"] + payload["trimmed_pixels"] == 12 * 16

    def test_filter_drops_highest_quarter(self, tmp_path, capsys):
        (tmp_path / "losses.json").write_text(json.dumps([0.1, 0.5, 0.2, 0.9]))
        code = run_cli(
            ["filter", "--losses", str(tmp_path / "losses.json"), "--drop-fraction", "0.25"]
        )
        assert code == 0
        assert _last_json(capsys) == {"kept_indices": [0, 1, 2]}


class TestProjectionCommands:
    def test_backproject_render_round_trip(self, tmp_path, rng, capsys):
        rgb = _write_rgbd(tmp_path, rng)
        save_camera(tmp_path / "cam.json", Camera(_intr(), Pose.identity()))
        assert run_cli(
            [
                "backproject",
                "--rgb", str(tmp_path / "rgb.png"),
                "--depth", str(tmp_path / "depth.png"),
                "--camera", str(tmp_path / "cam.json"),
                "--output", str(tmp_path / "cloud.ply"),
            ]
        ) == 0
        assert _last_json(capsys)["points"] == 12 * 16
        assert run_cli(
            [
                "render",
                "--cloud", str(tmp_path / "cloud.ply"),
                "--camera", str(tmp_path / "cam.json"),
                "--rgb", str(tmp_path / "out_rgb.png"),
                "--depth", str(tmp_path / "out_depth.png"),
                "--mask", str(tmp_path / "out_mask.png"),
            ]
        ) == 0
        assert _last_json(capsys)["visible_pixels"] == 12 * 16
        assert np.array_equal(load_rgb_png(tmp_path / "out_rgb.png"), rgb)


class TestPipeline:
    def test_flat_scene_end_to_end(self, tmp_path, rng, capsys):
        _write_rgbd(tmp_path, rng)
        traj = _line_trajectory(3)
        save_trajectory(tmp_path / "traj.json", traj)
        save_camera(tmp_path / "cam.json", traj.camera(0))
        code = run_cli(
            [
                "pipeline",
                "--initial-rgb", str(tmp_path / "rgb.png"),
                "--initial-depth", str(tmp_path / "depth.png"),
                "--initial-camera", str(tmp_path / "cam.json"),
                "--trajectory", str(tmp_path / "traj.json"),
                "--output", str(tmp_path / "scene"),
                "--beta", "1.0",
            ]
        )
        assert code == 0
        payload = _last_json(capsys)
        assert payload["keyframes"] == [0, 1, 2]
        assert payload["visit_order"] == [2, 1, 0]
        assert all(v in (None, 0.0) for v in payload["warp_losses"].values())
        state = read_scene(tmp_path / "scene")
        assert [r.index for r in state.keyframes] == [0, 2, 1]
        assert (tmp_path / "scene" / "cloud.ply").is_file()


class TestRasterize:
    def test_writes_three_control_images(self, tmp_path, capsys):
        intr = CameraIntrinsics(fx=100.0, fy=100.0, cx=63.5, cy=63.5, width=128, height=128)
        save_camera(tmp_path / "cam.json", Camera(intr, Pose.identity()))
        elements = {
            "polylines": [
                {
                    "layer": "lane_boundary",
                    "points": [[-1.5, 0.0, 5.0], [-1.5, 0.0, 30.0]],
                }
            ],
            "boxes": [
                {
                    "category": "vehicle",
                    "center": [0.0, 0.0, 6.0],
                    "size": [2.0, 1.0, 1.0],
                    "yaw": 0.3,
                }
            ],
        }
        (tmp_path / "elements.json").write_text(json.dumps(elements))
        code = run_cli(
            [
                "rasterize",
                "--elements", str(tmp_path / "elements.json"),
                "--camera", str(tmp_path / "cam.json"),
                "--map-output", str(tmp_path / "map.png"),
                "--semantic-output", str(tmp_path / "sem.png"),
                "--orientation-output", str(tmp_path / "ori.png"),
            ]
        )
        assert code == 0
        assert _last_json(capsys) == {"polylines": 1, "boxes": 1}
        map_img = load_rgb_png(tmp_path / "map.png")
        lit = map_img[map_img.any(axis=2)]
        assert len(lit) > 0 and np.array_equal(
            np.unique(lit, axis=0), [[1.0, 0.0, 0.0]]
        )
        assert load_rgb_png(tmp_path / "sem.png").any()
        assert load_rgb_png(tmp_path / "ori.png").any()


class TestInterpolate:
    def test_writes_frames_and_manifest(self, tmp_path, rng, capsys):
        _write_rgbd(tmp_path / "k1", rng)
        _write_rgbd(tmp_path / "k2", rng)
        intr = _intr()
        save_camera(tmp_path / "k1" / "camera.json", Camera(intr, Pose(np.eye(3), np.zeros(3))))
        save_camera(
            tmp_path / "k2" / "camera.json",
            Camera(intr, Pose(np.eye(3), np.array([0.0, 0.0, 1.0]))),
        )
        mids = Trajectory(
            tuple(Pose(np.eye(3), np.array([0.0, 0.0, z])) for z in (0.25, 0.5, 0.75)),
            intr,
        )
        save_trajectory(tmp_path / "mids.json", mids)
        code = run_cli(
            [
                "interpolate",
                "--k1", str(tmp_path / "k1"),
                "--k2", str(tmp_path / "k2"),
                "--trajectory", str(tmp_path / "mids.json"),
                "--output", str(tmp_path / "frames"),
                "--refine",
            ]
        )
        assert code == 0
        assert _last_json(capsys)["frames"] == 3
        manifest = json.loads((tmp_path / "frames" / "frames.json").read_text())
        assert manifest["format"] == "scapegeom-interpolation"
        assert len(manifest["frames"]) == 3
        for entry in manifest["frames"]:
            for key in ("rgb", "mask", "refined_rgb"):
                assert (tmp_path / "frames" / entry[key]).is_file()


class TestSample:
    def _run(self, capsys, *extra):
        argv = ["sample", "--seed", "7", "--count", "64", "--shape", "2", "2",
                "--timesteps", "50", *extra]
        assert run_cli(argv) == 0
        return _last_json(capsys)

    def test_deterministic_given_seed(self, capsys):
        a = self._run(capsys)
        b = self._run(capsys)
        assert a == b

    def test_different_seed_changes_output(self, capsys):
        a = self._run(capsys)
        argv = ["sample", "--seed", "8", "--count", "64", "--shape", "2", "2",
                "--timesteps", "50"]
        assert run_cli(argv) == 0
        assert _last_json(capsys) != a

    def test_guidance_pulls_mean_toward_target(self, capsys):
        free = self._run(capsys)
        pulled = self._run(capsys, "--guidance-w", "5.0", "--target", "3.0")
        assert abs(pulled["mean"] - 3.0) < abs(free["mean"] - 3.0)

    def test_output_file_holds_raw_samples(self, tmp_path, capsys):
        payload = self._run(capsys, "--output", str(tmp_path / "samples.json"))
        raw = json.loads((tmp_path / "samples.json").read_text())
        arr = np.asarray(raw["samples"])
        assert arr.shape == (64, 2, 2)
        assert raw["mean"] == payload["mean"]
