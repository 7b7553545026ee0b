import numpy as np
import pytest

from scapegeom import Camera, CameraIntrinsics, Pose, RgbdImage


@pytest.fixture
def rng():
    return np.random.default_rng(20240915)


def random_rotation(rng: np.random.Generator) -> np.ndarray:
    q, r = np.linalg.qr(rng.standard_normal((3, 3)))
    q = q * np.sign(np.diag(r))
    if np.linalg.det(q) < 0:
        q[:, 0] = -q[:, 0]
    return q


def random_camera(rng: np.random.Generator, max_size: int = 64) -> Camera:
    width = int(rng.integers(8, max_size + 1))
    height = int(rng.integers(8, max_size + 1))
    intrinsics = CameraIntrinsics(
        fx=float(rng.uniform(0.8, 2.0) * width),
        fy=float(rng.uniform(0.8, 2.0) * height),
        cx=(width - 1) / 2.0 + float(rng.uniform(-1.0, 1.0)),
        cy=(height - 1) / 2.0 + float(rng.uniform(-1.0, 1.0)),
        width=width,
        height=height,
    )
    pose = Pose(rotation=random_rotation(rng), translation=rng.uniform(-5.0, 5.0, size=3))
    return Camera(intrinsics, pose)


def random_rgbd(
    rng: np.random.Generator,
    height: int,
    width: int,
    depth_range=(0.5, 50.0),
    hole_fraction: float = 0.0,
    on_grid: bool = False,
) -> RgbdImage:
    if on_grid:
        rgb = rng.integers(0, 256, size=(height, width, 3)).astype(np.float64) / 255.0
    else:
        rgb = rng.random((height, width, 3))
    depth = rng.uniform(depth_range[0], depth_range[1], size=(height, width))
    if hole_fraction > 0.0:
        depth[rng.random((height, width)) < hole_fraction] = 0.0
    return RgbdImage(rgb, depth)


def identity_camera(width: int, height: int, fx: float = 50.0, fy: float = 50.0) -> Camera:
    intrinsics = CameraIntrinsics(
        fx=fx, fy=fy, cx=(width - 1) / 2.0, cy=(height - 1) / 2.0, width=width, height=height
    )
    return Camera(intrinsics, Pose.identity())
