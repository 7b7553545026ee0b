"""Keyframe selection and the autoregressive generate-render-accumulate loop.

Selection scans the trajectory forward from pose 0, emitting a pose
whenever its distance from the last emitted pose reaches beta (meters)
or its relative rotation reaches gamma (degrees, geodesic angle). Both
thresholds are inclusive. The final pose is always included so the
selected frames bracket the whole trajectory.

Generation visits the selected viewpoints starting from the trajectory
endpoint opposite the start frame and walking a greedy nearest-neighbor
chain over camera centers (ties to the lower trajectory index). Each
visit renders the accumulated point cloud into the viewpoint, asks the
generator to complete the image, then back-projects the completed frame
and merges it into the cloud. The start frame itself is never
regenerated.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .consistency import ConsistencyConfig, EmptyOverlap, warp_loss
from .core import (
    Camera,
    OutOfRangeValue,
    PointCloud,
    Pose,
    RenderBundle,
    RgbdImage,
    ScapegeomError,
    Trajectory,
    ValidationError,
    require_valid,
)
from .depth_codec import DepthCodecConfig
from .projection import back_project, merge_clouds, render_points

__all__ = [
    "KeyframeSelectionConfig",
    "GeneratorFailure",
    "CopyThroughGenerator",
    "KeyframeRecord",
    "SceneState",
    "rotation_angle_degrees",
    "select_keyframes",
    "order_viewpoints",
    "generate_scene",
]

# absorbs float rounding so a pose at exactly the threshold is selected
_THRESHOLD_GUARD = 1e-9


class GeneratorFailure(ScapegeomError):
    def __init__(self, message: str, keyframe_index: int):
        super().__init__(message)
        self.keyframe_index = keyframe_index


@dataclass(frozen=True)
class KeyframeSelectionConfig:
    """beta: translation threshold in meters; gamma: rotation threshold in degrees."""

    beta: float = 10.0
    gamma: float = 20.0

    def __post_init__(self):
        if self.beta <= 0.0:
            raise OutOfRangeValue(f"beta must be > 0, got {self.beta}")
        if not 0.0 < self.gamma < 180.0:
            raise OutOfRangeValue(f"gamma must lie in (0, 180), got {self.gamma}")


def rotation_angle_degrees(r_a: np.ndarray, r_b: np.ndarray) -> float:
    """Geodesic angle between two rotation matrices, in degrees."""
    r_rel = r_a.T @ r_b
    c = (np.trace(r_rel) - 1.0) / 2.0
    return math.degrees(math.acos(min(1.0, max(-1.0, c))))


def select_keyframes(traj: Trajectory, cfg: KeyframeSelectionConfig = KeyframeSelectionConfig()) -> list[int]:
    """Forward threshold scan; see module docstring for the rule."""
    require_valid(traj)
    selected = [0]
    last = traj.poses[0]
    for i in range(1, len(traj.poses)):
        pose = traj.poses[i]
        dist = float(np.linalg.norm(pose.translation - last.translation))
        angle = rotation_angle_degrees(last.rotation, pose.rotation)
        if dist >= cfg.beta - _THRESHOLD_GUARD or angle >= cfg.gamma - _THRESHOLD_GUARD:
            selected.append(i)
            last = pose
    final = len(traj.poses) - 1
    if selected[-1] != final:
        selected.append(final)
    return selected


def order_viewpoints(
    traj: Trajectory,
    keyframe_indices: list[int],
    start_camera: Camera | None = None,
) -> list[int]:
    """Visit order for generation: far endpoint first, then greedy
    nearest-center chain over the remaining keyframes (ties to lower index).

    start_camera marks the end of the trajectory holding the start
    frame; the chain begins at the opposite endpoint. Without it the
    chain begins at the last keyframe index.
    """
    if not keyframe_indices:
        raise ValidationError("keyframe index list is empty")
    indices = list(keyframe_indices)
    centers = {i: traj.poses[i].translation for i in indices}

    first = indices[0]
    if start_camera is None:
        start = indices[-1]
    else:
        c = start_camera.pose.translation
        d_first = float(np.linalg.norm(centers[first] - c))
        d_last = float(np.linalg.norm(centers[indices[-1]] - c))
        start = first if d_first > d_last else indices[-1]

    order = [start]
    remaining = [i for i in indices if i != start]
    while remaining:
        here = centers[order[-1]]
        best = min(remaining, key=lambda i: (float(np.linalg.norm(centers[i] - here)), i))
        order.append(best)
        remaining.remove(best)
    return order


@dataclass(frozen=True)
class CopyThroughGenerator:
    """Deterministic stub: keeps every rendered pixel untouched and fills
    holes with a constant (mid-gray color on the 8-bit grid, far-plane
    depth), so rendered pixels round-trip exactly through the loop."""

    fill_gray: float = 128.0 / 255.0
    fill_depth: float = 300.0

    def generate(self, bundle: RenderBundle, camera: Camera, controls=None) -> RgbdImage:
        holes = bundle.mask.mask == 0
        rgb = bundle.image.rgb.copy()
        rgb[holes] = self.fill_gray
        depth = bundle.image.depth.copy()
        depth[holes] = self.fill_depth
        return RgbdImage(rgb, depth)


@dataclass(frozen=True)
class KeyframeRecord:
    """One completed keyframe. bundle and warp_loss_value are None for
    the start frame (nothing was rendered or generated for it), and
    warp_loss_value is None when the rendered mask was empty."""

    index: int
    camera: Camera
    image: RgbdImage
    bundle: RenderBundle | None
    warp_loss_value: float | None


@dataclass(frozen=True)
class SceneState:
    cloud: PointCloud
    keyframes: tuple
    visit_order: tuple

    def keyframe(self, index: int) -> KeyframeRecord:
        for rec in self.keyframes:
            if rec.index == index:
                return rec
        raise KeyError(f"no keyframe with trajectory index {index}")


def _poses_match(a: Pose, b: Pose) -> bool:
    return bool(
        np.allclose(a.rotation, b.rotation, atol=1e-9)
        and np.allclose(a.translation, b.translation, atol=1e-9)
    )


def generate_scene(
    initial_image: RgbdImage,
    initial_camera: Camera,
    traj: Trajectory,
    keyframe_indices: list[int],
    generator,
    controls=None,
    codec: DepthCodecConfig = DepthCodecConfig(),
) -> SceneState:
    """Run the sequential generation loop; see module docstring.

    The start frame must sit at one end of the trajectory. Each step's
    consistency loss (no trimming) between the generated frame and its
    rendered bundle is recorded. The loop itself is sequential by
    design: every step conditions on all geometry accumulated so far.
    """
    require_valid(initial_camera)
    require_valid(initial_image)
    require_valid(traj)
    endpoint_poses = (traj.poses[0], traj.poses[-1])
    if not any(_poses_match(initial_camera.pose, p) for p in endpoint_poses):
        raise ValidationError("start camera pose is not an endpoint of the trajectory")

    initial_index = 0 if _poses_match(initial_camera.pose, traj.poses[0]) else len(traj.poses) - 1
    cloud = back_project(initial_image, initial_camera, source_index=initial_index)
    records = [KeyframeRecord(initial_index, initial_camera, initial_image, None, None)]
    visit = (
        order_viewpoints(traj, keyframe_indices, start_camera=initial_camera)
        if keyframe_indices
        else []
    )
    loss_cfg = ConsistencyConfig(trim_fraction=0.0)

    for idx in visit:
        camera = traj.camera(idx)
        if _poses_match(camera.pose, initial_camera.pose):
            continue
        bundle = render_points(cloud, camera)
        try:
            image = generator.generate(bundle, camera, controls)
        except GeneratorFailure:
            raise
        except Exception as exc:
            raise GeneratorFailure(f"generator failed at keyframe {idx}: {exc}", idx) from exc
        require_valid(image)
        if image.height != camera.intrinsics.height or image.width != camera.intrinsics.width:
            raise GeneratorFailure(f"generator output dims mismatch camera at keyframe {idx}", idx)
        try:
            loss = warp_loss(image, bundle.image, bundle.mask, loss_cfg, codec)
        except EmptyOverlap:
            loss = None
        cloud = merge_clouds([cloud, back_project(image, camera, source_index=idx)])
        records.append(KeyframeRecord(idx, camera, image, bundle, loss))

    return SceneState(cloud=cloud, keyframes=tuple(records), visit_order=tuple(visit))
