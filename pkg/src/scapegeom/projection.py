"""Back-projection of RGB-D images and z-buffered point rendering.

Geometry conventions (see core module): camera-to-world poses, camera
frame x-right/y-down/z-forward, pixel (u, v) = (column, row) with pixel
centers at integer coordinates.

Projection rules
----------------
* A pixel (u, v) with depth d back-projects to the camera-frame point
  ((u - cx)/fx * d, (v - cy)/fy * d, d), then through the pose.
* Rendering discards points with camera-frame z <= z_near (1e-3 m),
  projects survivors to (fx*x/z + cx, fy*y/z + cy), and rounds half-up
  on both axes. A point landing exactly on the half-open image boundary
  (u = width - 0.5) rounds off-image and is discarded.
* Per pixel the smallest camera-frame depth wins; exact depth ties go to
  the lowest point index. An optional integer splat radius r paints each
  point over the (2r+1) x (2r+1) pixel square around its target, with
  the same depth competition per covered pixel.

Rendering is vectorized but defined to be bit-identical to the serial
scan that visits points in index order and keeps the nearest.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .core import (
    Camera,
    DimensionMismatch,
    PointCloud,
    Pose,
    RenderBundle,
    RgbdImage,
    ScapegeomError,
    VisibilityMask,
    require_valid,
)

__all__ = [
    "Z_NEAR",
    "back_project",
    "render_points",
    "transform_cloud",
    "merge_clouds",
    "save_ply",
    "load_ply",
    "PlyFormatError",
]

Z_NEAR = 1e-3


class PlyFormatError(ScapegeomError):
    pass


def back_project(image: RgbdImage, camera: Camera, source_index: int = 0) -> PointCloud:
    """Lift every pixel with depth > 0 into a world-frame point.

    Parameters
    ----------
    image : RgbdImage
        Source colors and metric depths; depth 0 pixels produce no point.
    camera : Camera
        Viewpoint whose intrinsics must match the image dimensions.
    source_index : int
        Keyframe id stamped on every produced point.

    Returns
    -------
    PointCloud
        One point per valid pixel, ordered row-major by pixel, with the
        pixel's color copied verbatim.
    """
    require_valid(camera)
    intr = camera.intrinsics
    if image.depth.shape != (intr.height, intr.width):
        raise DimensionMismatch(
            f"image is {image.depth.shape}, camera expects {(intr.height, intr.width)}"
        )
    depth = image.depth
    valid = depth > 0
    if not valid.any():
        return PointCloud.empty()
    vs, us = np.nonzero(valid)
    d = depth[vs, us]
    x = (us - intr.cx) / intr.fx * d
    y = (vs - intr.cy) / intr.fy * d
    cam_points = np.stack([x, y, d], axis=1)
    world = camera.pose.apply(cam_points)
    colors = image.rgb[vs, us]
    src = np.full(len(d), int(source_index), dtype=np.int64)
    return PointCloud(world, colors, src)


def render_points(cloud: PointCloud, camera: Camera, splat_radius: int = 0) -> RenderBundle:
    """Project a cloud into a target view with per-pixel z-buffering.

    Returns a RenderBundle whose image holds the winning point's color
    and camera-frame depth per covered pixel, zeros elsewhere, and whose
    mask is 1 exactly where a point landed.
    """
    require_valid(camera)
    if splat_radius < 0:
        raise ValueError(f"splat_radius must be >= 0, got {splat_radius}")
    intr = camera.intrinsics
    h, w = intr.height, intr.width
    rgb = np.zeros((h, w, 3), dtype=np.float64)
    depth = np.zeros((h, w), dtype=np.float64)
    mask = np.zeros((h, w), dtype=np.uint8)
    if len(cloud) == 0:
        return RenderBundle(RgbdImage(rgb, depth), VisibilityMask(mask))

    # world -> camera as R^T (p - t) with a fixed association: the same
    # three products and two adds as a scalar loop, so the output is
    # bit-identical to a sequential renderer regardless of BLAS kernels
    rot = camera.pose.rotation
    d = cloud.positions - camera.pose.translation
    cam = (d[:, 0, None] * rot[0, :] + d[:, 1, None] * rot[1, :]) + d[:, 2, None] * rot[2, :]
    z = cam[:, 2]
    front = z > Z_NEAR
    if not front.any():
        return RenderBundle(RgbdImage(rgb, depth), VisibilityMask(mask))
    idx = np.nonzero(front)[0]
    zf = z[idx]
    # round-half-up puts u = width - 0.5 at width, which falls off-image
    u = np.floor(intr.fx * cam[idx, 0] / zf + intr.cx + 0.5).astype(np.int64)
    v = np.floor(intr.fy * cam[idx, 1] / zf + intr.cy + 0.5).astype(np.int64)

    if splat_radius > 0:
        r = int(splat_radius)
        offs = np.arange(-r, r + 1)
        du, dv = np.meshgrid(offs, offs, indexing="xy")
        u = (u[:, None] + du.reshape(-1)[None, :]).reshape(-1)
        v = (v[:, None] + dv.reshape(-1)[None, :]).reshape(-1)
        reps = (2 * r + 1) ** 2
        idx = np.repeat(idx, reps)
        zf = np.repeat(zf, reps)

    inside = (u >= 0) & (u < w) & (v >= 0) & (v < h)
    if not inside.any():
        return RenderBundle(RgbdImage(rgb, depth), VisibilityMask(mask))
    u, v, idx, zf = u[inside], v[inside], idx[inside], zf[inside]

    flat = v * w + u
    # sort by pixel, then depth, then original point index: the first
    # entry per pixel is the z-buffer winner with the declared tie-break
    order = np.lexsort((idx, zf, flat))
    flat_sorted = flat[order]
    first = np.ones(len(order), dtype=bool)
    first[1:] = flat_sorted[1:] != flat_sorted[:-1]
    win = order[first]

    pix = flat[win]
    depth.reshape(-1)[pix] = zf[win]
    rgb.reshape(-1, 3)[pix] = cloud.colors[idx[win]]
    mask.reshape(-1)[pix] = 1
    return RenderBundle(RgbdImage(rgb, depth), VisibilityMask(mask))


def transform_cloud(cloud: PointCloud, pose: Pose) -> PointCloud:
    """Apply a rigid transform to every point; colors and sources unchanged."""
    return PointCloud(pose.apply(cloud.positions), cloud.colors, cloud.source_index)


def merge_clouds(clouds) -> PointCloud:
    """Concatenate clouds in order, preserving source indices."""
    clouds = list(clouds)
    if not clouds:
        return PointCloud.empty()
    return PointCloud(
        np.concatenate([c.positions for c in clouds]),
        np.concatenate([c.colors for c in clouds]),
        np.concatenate([c.source_index for c in clouds]),
    )


# ---------------------------------------------------------------------------
# PLY export/import: binary little-endian, x/y/z float32 + red/green/blue uint8

_PLY_DTYPE = np.dtype(
    [("x", "<f4"), ("y", "<f4"), ("z", "<f4"), ("red", "u1"), ("green", "u1"), ("blue", "u1")]
)

_PLY_PROPERTIES = [
    ("float", "x"),
    ("float", "y"),
    ("float", "z"),
    ("uchar", "red"),
    ("uchar", "green"),
    ("uchar", "blue"),
]


def save_ply(path, cloud: PointCloud) -> None:
    """Write a cloud as binary little-endian PLY; colors quantized to uint8."""
    n = len(cloud)
    header = ["ply", "format binary_little_endian 1.0", f"element vertex {n}"]
    header += [f"property {t} {name}" for t, name in _PLY_PROPERTIES]
    header.append("end_header")
    rec = np.empty(n, dtype=_PLY_DTYPE)
    rec["x"] = cloud.positions[:, 0]
    rec["y"] = cloud.positions[:, 1]
    rec["z"] = cloud.positions[:, 2]
    codes = np.floor(cloud.colors * 255.0 + 0.5).astype(np.uint8)
    rec["red"], rec["green"], rec["blue"] = codes[:, 0], codes[:, 1], codes[:, 2]
    with open(path, "wb") as f:
        f.write(("\n".join(header) + "\n").encode("ascii"))
        f.write(rec.tobytes())


def load_ply(path) -> PointCloud:
    """Read a PLY written by save_ply. Imported points get source_index 0.

    Only the exact property layout produced by save_ply is accepted; the
    container format carries no source ids, so they cannot be recovered.
    """
    raw = Path(path).read_bytes()
    end = raw.find(b"end_header\n")
    if not raw.startswith(b"ply") or end < 0:
        raise PlyFormatError(f"{path}: not a PLY file")
    header_lines = raw[:end].decode("ascii", errors="replace").splitlines()
    body = raw[end + len(b"end_header\n"):]
    if "format binary_little_endian 1.0" not in header_lines:
        raise PlyFormatError(f"{path}: expected binary little-endian PLY")
    n = None
    props = []
    for line in header_lines:
        if line.startswith("element vertex"):
            n = int(line.split()[-1])
        elif line.startswith("element "):
            raise PlyFormatError(f"{path}: unsupported element '{line}'")
        elif line.startswith("property"):
            _, typ, name = line.split()
            props.append((typ, name))
    if n is None:
        raise PlyFormatError(f"{path}: missing vertex element")
    if props != _PLY_PROPERTIES:
        raise PlyFormatError(f"{path}: unsupported property layout {props}")
    expected = n * _PLY_DTYPE.itemsize
    if len(body) < expected:
        raise PlyFormatError(f"{path}: truncated body ({len(body)} < {expected} bytes)")
    rec = np.frombuffer(body[:expected], dtype=_PLY_DTYPE)
    positions = np.stack([rec["x"], rec["y"], rec["z"]], axis=1).astype(np.float64)
    colors = np.stack([rec["red"], rec["green"], rec["blue"]], axis=1).astype(np.float64) / 255.0
    return PointCloud(positions, colors, np.zeros(n, dtype=np.int64))
