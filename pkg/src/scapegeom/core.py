"""Shared domain types, coordinate conventions, and validation.

Conventions used throughout the package:

* Poses are camera-to-world rigid transforms. The camera frame is
  x-right, y-down, z-forward.
* Image arrays are row-major with the origin at the top-left pixel.
  A pixel coordinate (u, v) means (column, row), and pixel centers sit
  at integer coordinates.
* depth == 0 is the universal "hole / no measurement" sentinel. A true
  measured depth of exactly 0 is physically impossible for a pinhole
  camera, so the sentinel is unambiguous.

All types are immutable after construction (frozen dataclasses holding
read-only numpy arrays) and therefore safe for concurrent reads.
Construction only coerces dtypes; invariants are checked by
:func:`validate`, which reports the first violation instead of raising,
and :func:`require_valid`, which raises it.
"""

from __future__ import annotations

import functools
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

__all__ = [
    "ScapegeomError",
    "ValidationError",
    "DimensionMismatch",
    "NonOrthonormalRotation",
    "OutOfRangeValue",
    "CameraIntrinsics",
    "Pose",
    "Camera",
    "RgbdImage",
    "PointCloud",
    "VisibilityMask",
    "RenderBundle",
    "Trajectory",
    "validate",
    "require_valid",
    "camera_to_json",
    "camera_from_json",
    "trajectory_to_json",
    "trajectory_from_json",
    "load_camera",
    "save_camera",
    "load_trajectory",
    "save_trajectory",
]

ORTHONORMAL_TOL = 1e-6


class ScapegeomError(Exception):
    """Base class for all domain errors raised by this package."""


class ValidationError(ScapegeomError):
    """Base class for invariant violations reported by validate()."""


class DimensionMismatch(ValidationError):
    pass


class NonOrthonormalRotation(ValidationError):
    pass


class OutOfRangeValue(ValidationError):
    pass


def _frozen_array(value, dtype) -> np.ndarray:
    arr = np.array(value, dtype=dtype, copy=True)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class CameraIntrinsics:
    """Pinhole intrinsics; focal lengths and principal point in pixels."""

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        object.__setattr__(self, "fx", float(self.fx))
        object.__setattr__(self, "fy", float(self.fy))
        object.__setattr__(self, "cx", float(self.cx))
        object.__setattr__(self, "cy", float(self.cy))
        object.__setattr__(self, "width", int(self.width))
        object.__setattr__(self, "height", int(self.height))


@dataclass(frozen=True)
class Pose:
    """Camera-to-world rigid transform: p_world = rotation @ p_cam + translation."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "rotation", _frozen_array(self.rotation, np.float64))
        object.__setattr__(self, "translation", _frozen_array(self.translation, np.float64))

    @staticmethod
    def identity() -> "Pose":
        return Pose(np.eye(3), np.zeros(3))

    def compose(self, other: "Pose") -> "Pose":
        """Return self applied after other: (self ∘ other)(p) = self(other(p))."""
        return Pose(
            self.rotation @ other.rotation,
            self.rotation @ other.translation + self.translation,
        )

    def inverse(self) -> "Pose":
        rt = self.rotation.T
        return Pose(rt, -rt @ self.translation)

    def apply(self, points: np.ndarray) -> np.ndarray:
        """Transform an (..., 3) array of points."""
        pts = np.asarray(points, dtype=np.float64)
        return pts @ self.rotation.T + self.translation


@dataclass(frozen=True)
class Camera:
    intrinsics: CameraIntrinsics
    pose: Pose

    @property
    def center(self) -> np.ndarray:
        """Camera center in world coordinates."""
        return self.pose.translation


@dataclass(frozen=True)
class RgbdImage:
    """Color in [0,1] (H, W, 3) plus metric depth in meters (H, W); depth 0 = hole."""

    rgb: np.ndarray
    depth: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "rgb", _frozen_array(self.rgb, np.float64))
        object.__setattr__(self, "depth", _frozen_array(self.depth, np.float64))

    @property
    def height(self) -> int:
        return self.depth.shape[0]

    @property
    def width(self) -> int:
        return self.depth.shape[1]


@dataclass(frozen=True)
class PointCloud:
    """World-frame colored points accumulated across keyframes."""

    positions: np.ndarray
    colors: np.ndarray
    source_index: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "positions", _frozen_array(self.positions, np.float64).reshape(-1, 3))
        object.__setattr__(self, "colors", _frozen_array(self.colors, np.float64).reshape(-1, 3))
        object.__setattr__(self, "source_index", _frozen_array(self.source_index, np.int64).reshape(-1))
        self.positions.setflags(write=False)
        self.colors.setflags(write=False)
        self.source_index.setflags(write=False)

    @staticmethod
    def empty() -> "PointCloud":
        return PointCloud(np.zeros((0, 3)), np.zeros((0, 3)), np.zeros(0, dtype=np.int64))

    def __len__(self) -> int:
        return self.positions.shape[0]


@dataclass(frozen=True)
class VisibilityMask:
    """Binary H×W mask; 1 where a rendered point landed."""

    mask: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "mask", _frozen_array(self.mask, np.uint8))

    def count(self) -> int:
        return int(self.mask.sum())


@dataclass(frozen=True)
class RenderBundle:
    """Rendered keyframe points plus visibility mask at a target viewpoint.

    Holes carry rgb = 0 and depth = 0; mask[i] = 0 implies depth[i] = 0.
    """

    image: RgbdImage
    mask: VisibilityMask


@dataclass(frozen=True)
class Trajectory:
    """Ordered camera poses sharing one set of intrinsics."""

    poses: tuple
    intrinsics: CameraIntrinsics

    def __post_init__(self):
        object.__setattr__(self, "poses", tuple(self.poses))

    def __len__(self) -> int:
        return len(self.poses)

    def camera(self, index: int) -> Camera:
        return Camera(self.intrinsics, self.poses[index])


# ---------------------------------------------------------------------------
# validation


def _check_finite(arr: np.ndarray, what: str):
    if not np.all(np.isfinite(arr)):
        return OutOfRangeValue(f"{what} contains non-finite values")
    return None


@functools.singledispatch
def validate(entity):
    """Return the first violated invariant as an exception instance, or None.

    Pure function: repeated calls give identical results. Use
    require_valid() to raise instead.
    """
    raise TypeError(f"no validator registered for {type(entity).__name__}")


@validate.register
def _(entity: CameraIntrinsics):
    if not (entity.fx > 0 and entity.fy > 0):
        return OutOfRangeValue(f"focal lengths must be positive, got fx={entity.fx}, fy={entity.fy}")
    if entity.width < 1 or entity.height < 1:
        return OutOfRangeValue(f"image size must be at least 1x1, got {entity.width}x{entity.height}")
    if not (0 <= entity.cx < entity.width):
        return OutOfRangeValue(f"cx={entity.cx} outside [0, {entity.width})")
    if not (0 <= entity.cy < entity.height):
        return OutOfRangeValue(f"cy={entity.cy} outside [0, {entity.height})")
    return None


@validate.register
def _(entity: Pose):
    if entity.rotation.shape != (3, 3):
        return DimensionMismatch(f"rotation must be 3x3, got {entity.rotation.shape}")
    if entity.translation.shape != (3,):
        return DimensionMismatch(f"translation must be a 3-vector, got {entity.translation.shape}")
    err = _check_finite(entity.rotation, "rotation") or _check_finite(entity.translation, "translation")
    if err:
        return err
    r = entity.rotation
    if np.max(np.abs(r.T @ r - np.eye(3))) > ORTHONORMAL_TOL:
        return NonOrthonormalRotation("R^T R deviates from identity beyond 1e-6")
    if abs(np.linalg.det(r) - 1.0) > ORTHONORMAL_TOL:
        return NonOrthonormalRotation(f"det(R) = {np.linalg.det(r):.9f}, expected +1")
    return None


@validate.register
def _(entity: Camera):
    return validate(entity.intrinsics) or validate(entity.pose)


@validate.register
def _(entity: RgbdImage):
    if entity.rgb.ndim != 3 or entity.rgb.shape[2] != 3:
        return DimensionMismatch(f"rgb must be (H, W, 3), got {entity.rgb.shape}")
    if entity.depth.ndim != 2:
        return DimensionMismatch(f"depth must be (H, W), got {entity.depth.shape}")
    if entity.rgb.shape[:2] != entity.depth.shape:
        return DimensionMismatch(
            f"rgb {entity.rgb.shape[:2]} and depth {entity.depth.shape} disagree on H, W"
        )
    err = _check_finite(entity.rgb, "rgb") or _check_finite(entity.depth, "depth")
    if err:
        return err
    if entity.rgb.min(initial=0.0) < 0.0 or entity.rgb.max(initial=0.0) > 1.0:
        return OutOfRangeValue("rgb values must lie in [0, 1]")
    if entity.depth.min(initial=0.0) < 0.0:
        return OutOfRangeValue("depth values must be >= 0")
    return None


@validate.register
def _(entity: PointCloud):
    n = entity.positions.shape[0]
    if entity.colors.shape != (n, 3):
        return DimensionMismatch(f"colors must be ({n}, 3), got {entity.colors.shape}")
    if entity.source_index.shape != (n,):
        return DimensionMismatch(f"source_index must be length {n}, got {entity.source_index.shape}")
    err = _check_finite(entity.positions, "positions") or _check_finite(entity.colors, "colors")
    if err:
        return err
    if n and (entity.colors.min() < 0.0 or entity.colors.max() > 1.0):
        return OutOfRangeValue("colors must lie in [0, 1]")
    return None


@validate.register
def _(entity: VisibilityMask):
    if entity.mask.ndim != 2:
        return DimensionMismatch(f"mask must be (H, W), got {entity.mask.shape}")
    if not np.isin(entity.mask, (0, 1)).all():
        return OutOfRangeValue("mask values must be strictly 0 or 1")
    return None


@validate.register
def _(entity: RenderBundle):
    err = validate(entity.image) or validate(entity.mask)
    if err:
        return err
    if entity.mask.mask.shape != entity.image.depth.shape:
        return DimensionMismatch(
            f"mask {entity.mask.mask.shape} and image {entity.image.depth.shape} disagree"
        )
    if np.any(entity.image.depth[entity.mask.mask == 0] != 0.0):
        return OutOfRangeValue("mask = 0 pixels must carry depth = 0")
    return None


@validate.register
def _(entity: Trajectory):
    if len(entity.poses) == 0:
        return OutOfRangeValue("trajectory must contain at least one pose")
    err = validate(entity.intrinsics)
    if err:
        return err
    for i, pose in enumerate(entity.poses):
        err = validate(pose)
        if err:
            return type(err)(f"pose {i}: {err}")
    return None


def require_valid(entity):
    """Raise the first violated invariant of entity, if any."""
    err = validate(entity)
    if err is not None:
        raise err
    return entity


# ---------------------------------------------------------------------------
# JSON schemas for cameras and trajectories


def _intrinsics_to_dict(intr: CameraIntrinsics) -> dict:
    return {
        "fx": intr.fx,
        "fy": intr.fy,
        "cx": intr.cx,
        "cy": intr.cy,
        "width": intr.width,
        "height": intr.height,
    }


def _intrinsics_from_dict(d: dict) -> CameraIntrinsics:
    return CameraIntrinsics(
        fx=d["fx"], fy=d["fy"], cx=d["cx"], cy=d["cy"], width=d["width"], height=d["height"]
    )


def _pose_to_dict(pose: Pose) -> dict:
    return {
        "rotation": [float(x) for x in pose.rotation.reshape(-1)],
        "translation": [float(x) for x in pose.translation],
    }


def _pose_from_dict(d: dict) -> Pose:
    rot = np.asarray(d["rotation"], dtype=np.float64)
    if rot.size != 9:
        raise DimensionMismatch(f"pose rotation must have 9 entries, got {rot.size}")
    return Pose(rot.reshape(3, 3), np.asarray(d["translation"], dtype=np.float64))


def camera_to_json(camera: Camera) -> dict:
    return {"intrinsics": _intrinsics_to_dict(camera.intrinsics), "pose": _pose_to_dict(camera.pose)}


def camera_from_json(d: dict) -> Camera:
    return Camera(_intrinsics_from_dict(d["intrinsics"]), _pose_from_dict(d["pose"]))


def trajectory_to_json(traj: Trajectory) -> dict:
    return {
        "intrinsics": _intrinsics_to_dict(traj.intrinsics),
        "poses": [_pose_to_dict(p) for p in traj.poses],
    }


def trajectory_from_json(d: dict) -> Trajectory:
    return Trajectory(
        poses=tuple(_pose_from_dict(p) for p in d["poses"]),
        intrinsics=_intrinsics_from_dict(d["intrinsics"]),
    )


def save_camera(path, camera: Camera) -> None:
    Path(path).write_text(json.dumps(camera_to_json(camera), indent=2))


def load_camera(path) -> Camera:
    return camera_from_json(json.loads(Path(path).read_text()))


def save_trajectory(path, traj: Trajectory) -> None:
    Path(path).write_text(json.dumps(trajectory_to_json(traj), indent=2))


def load_trajectory(path) -> Trajectory:
    return trajectory_from_json(json.loads(Path(path).read_text()))
