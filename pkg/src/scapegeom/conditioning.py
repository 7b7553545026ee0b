"""Control-image rasterization: HD-map polylines, 3-D boxes, mask pyramid.

World-space polylines and oriented boxes are projected through a camera
and drawn as 1-pixel lines into float RGB images in [0, 1] on a black
background. Segments are first clipped to the camera's near plane by
parameter interpolation (so nothing divides by a near-zero depth), then
projected, clipped to the image rectangle, and drawn with integer line
stepping between half-up-rounded endpoints.

Box geometry convention: the box frame has x along length (front),
y along width (left), z along height (up); yaw rotates the box about
the world +z axis. Corner 0 is front-left-bottom; corners 0..3 walk the
bottom ring (FL, FR, BR, BL) and 4..7 the matching top ring. The twelve
edges are the bottom ring, the top ring, then the four verticals
(0-4, 1-5, 2-6, 3-7), in that order.

Color palettes (documented constants, all distinct, never black):
map layers      lane_boundary=red, lane_divider=green,
                pedestrian_crossing=blue
box categories  vehicle=orange, pedestrian=cyan, roadblock=magenta,
                other=yellow
box edges       EDGE_COLORS[i] colors edge i identically on every box.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import (
    Camera,
    OutOfRangeValue,
    ScapegeomError,
    ValidationError,
    VisibilityMask,
    require_valid,
)
from .projection import Z_NEAR

__all__ = [
    "MAP_LAYERS",
    "LAYER_COLORS",
    "BOX_CATEGORIES",
    "CATEGORY_COLORS",
    "EDGE_COLORS",
    "BOX_EDGES",
    "NonDivisibleFactor",
    "MapPolyline",
    "ObjectBox",
    "ControlImages",
    "rasterize_map",
    "rasterize_boxes_semantic",
    "rasterize_boxes_orientation",
    "render_control_images",
    "downsample_mask",
    "polyline_from_json",
    "box_from_json",
    "polyline_to_json",
    "box_to_json",
]

LAYER_COLORS = {
    "lane_boundary": (1.0, 0.0, 0.0),
    "lane_divider": (0.0, 1.0, 0.0),
    "pedestrian_crossing": (0.0, 0.0, 1.0),
}
MAP_LAYERS = frozenset(LAYER_COLORS)

CATEGORY_COLORS = {
    "vehicle": (1.0, 0.5, 0.0),
    "pedestrian": (0.0, 1.0, 1.0),
    "roadblock": (1.0, 0.0, 1.0),
    "other": (1.0, 1.0, 0.0),
}
BOX_CATEGORIES = frozenset(CATEGORY_COLORS)

EDGE_COLORS = (
    (1.0, 0.0, 0.0),
    (0.0, 1.0, 0.0),
    (0.0, 0.0, 1.0),
    (1.0, 1.0, 0.0),
    (1.0, 0.0, 1.0),
    (0.0, 1.0, 1.0),
    (1.0, 0.5, 0.0),
    (0.5, 1.0, 0.0),
    (0.0, 0.5, 1.0),
    (0.5, 0.0, 1.0),
    (1.0, 1.0, 1.0),
    (0.5, 0.5, 0.5),
)

# corner pairs: bottom ring, top ring, verticals
BOX_EDGES = (
    (0, 1), (1, 2), (2, 3), (3, 0),
    (4, 5), (5, 6), (6, 7), (7, 4),
    (0, 4), (1, 5), (2, 6), (3, 7),
)


class NonDivisibleFactor(ScapegeomError):
    pass


@dataclass(frozen=True)
class MapPolyline:
    points: np.ndarray  # (N, 3) world meters
    layer: str

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64)
        if pts.ndim != 2 or pts.shape[1] != 3 or pts.shape[0] < 2:
            raise ValidationError(f"polyline needs (N>=2, 3) points, got {pts.shape}")
        if self.layer not in MAP_LAYERS:
            raise OutOfRangeValue(f"unknown map layer {self.layer!r}")
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)


@dataclass(frozen=True)
class ObjectBox:
    center: np.ndarray  # (3,) world meters
    size: tuple  # (length, width, height) meters
    yaw: float  # radians about world +z
    category: str

    def __post_init__(self):
        c = np.asarray(self.center, dtype=np.float64).reshape(3)
        size = tuple(float(s) for s in self.size)
        if len(size) != 3 or any(s <= 0.0 for s in size):
            raise OutOfRangeValue(f"box size components must be > 0, got {size}")
        if self.category not in BOX_CATEGORIES:
            raise OutOfRangeValue(f"unknown box category {self.category!r}")
        c.setflags(write=False)
        object.__setattr__(self, "center", c)
        object.__setattr__(self, "size", size)
        object.__setattr__(self, "yaw", float(self.yaw))

    def corners(self) -> np.ndarray:
        """(8, 3) world corners; see module docstring for the ordering."""
        l, w, h = (s / 2.0 for s in self.size)
        local = np.array(
            [
                [+l, +w, -h], [+l, -w, -h], [-l, -w, -h], [-l, +w, -h],
                [+l, +w, +h], [+l, -w, +h], [-l, -w, +h], [-l, +w, +h],
            ]
        )
        cy, sy = math.cos(self.yaw), math.sin(self.yaw)
        rot = np.array([[cy, -sy, 0.0], [sy, cy, 0.0], [0.0, 0.0, 1.0]])
        return local @ rot.T + self.center


@dataclass(frozen=True)
class ControlImages:
    map_image: np.ndarray
    semantic_box_image: np.ndarray
    orientation_box_image: np.ndarray

    def __post_init__(self):
        shapes = {
            np.asarray(getattr(self, f)).shape
            for f in ("map_image", "semantic_box_image", "orientation_box_image")
        }
        if len(shapes) != 1:
            raise ValidationError(f"control images disagree on shape: {shapes}")


def _clip_near(a: np.ndarray, b: np.ndarray):
    """Clip camera-frame segment ab to z > Z_NEAR; None when fully behind."""
    za, zb = a[2], b[2]
    if za <= Z_NEAR and zb <= Z_NEAR:
        return None
    if za <= Z_NEAR:
        a = a + (Z_NEAR - za) / (zb - za) * (b - a)
    elif zb <= Z_NEAR:
        b = b + (Z_NEAR - zb) / (za - zb) * (a - b)
    return a, b


def _clip_rect(x0, y0, x1, y1, xmax, ymax):
    """Liang-Barsky clip to [0, xmax] x [0, ymax]; None when outside."""
    t0, t1 = 0.0, 1.0
    dx, dy = x1 - x0, y1 - y0
    for p, q in ((-dx, x0), (dx, xmax - x0), (-dy, y0), (dy, ymax - y0)):
        if p == 0.0:
            if q < 0.0:
                return None
        else:
            r = q / p
            if p < 0.0:
                if r > t1:
                    return None
                if r > t0:
                    t0 = r
            else:
                if r < t0:
                    return None
                if r < t1:
                    t1 = r
    return x0 + t0 * dx, y0 + t0 * dy, x0 + t1 * dx, y0 + t1 * dy


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def _draw_segment_world(image: np.ndarray, color, a_world, b_world, camera: Camera) -> None:
    """Project one world segment and paint it as a 1-px line."""
    inv = camera.pose.inverse()
    clipped = _clip_near(inv.apply(np.asarray(a_world, dtype=np.float64)[None, :])[0],
                         inv.apply(np.asarray(b_world, dtype=np.float64)[None, :])[0])
    if clipped is None:
        return
    a, b = clipped
    k = camera.intrinsics
    u0, v0 = k.fx * a[0] / a[2] + k.cx, k.fy * a[1] / a[2] + k.cy
    u1, v1 = k.fx * b[0] / b[2] + k.cx, k.fy * b[1] / b[2] + k.cy
    rect = _clip_rect(u0, v0, u1, v1, k.width - 1.0, k.height - 1.0)
    if rect is None:
        return
    u0i, v0i = _round_half_up(rect[0]), _round_half_up(rect[1])
    u1i, v1i = _round_half_up(rect[2]), _round_half_up(rect[3])
    du, dv = abs(u1i - u0i), abs(v1i - v0i)
    su = 1 if u0i < u1i else -1
    sv = 1 if v0i < v1i else -1
    err = du - dv
    u, v = u0i, v0i
    while True:
        if 0 <= v < image.shape[0] and 0 <= u < image.shape[1]:
            image[v, u] = color
        if u == u1i and v == v1i:
            return
        e2 = 2 * err
        if e2 > -dv:
            err -= dv
            u += su
        if e2 < du:
            err += du
            v += sv


def _blank(camera: Camera) -> np.ndarray:
    return np.zeros((camera.intrinsics.height, camera.intrinsics.width, 3), dtype=np.float64)


def rasterize_map(polylines, camera: Camera) -> np.ndarray:
    """Draw each polyline in its layer color; black background."""
    require_valid(camera)
    image = _blank(camera)
    for line in polylines:
        color = LAYER_COLORS[line.layer]
        for i in range(len(line.points) - 1):
            _draw_segment_world(image, color, line.points[i], line.points[i + 1], camera)
    return image


def _painter_order(boxes, camera: Camera) -> list:
    inv = camera.pose.inverse()
    depths = [float(inv.apply(b.center[None, :])[0, 2]) for b in boxes]
    # far boxes first so near boxes overdraw; stable for equal depths
    return [boxes[i] for i in sorted(range(len(boxes)), key=lambda i: -depths[i])]


def rasterize_boxes_semantic(boxes, camera: Camera) -> np.ndarray:
    """All 12 edges per box in the category color, painter's order."""
    require_valid(camera)
    image = _blank(camera)
    for box in _painter_order(list(boxes), camera):
        corners = box.corners()
        color = CATEGORY_COLORS[box.category]
        for i, j in BOX_EDGES:
            _draw_segment_world(image, color, corners[i], corners[j], camera)
    return image


def rasterize_boxes_orientation(boxes, camera: Camera) -> np.ndarray:
    """Edge k of every box uses EDGE_COLORS[k]; painter's order."""
    require_valid(camera)
    image = _blank(camera)
    for box in _painter_order(list(boxes), camera):
        corners = box.corners()
        for k, (i, j) in enumerate(BOX_EDGES):
            _draw_segment_world(image, EDGE_COLORS[k], corners[i], corners[j], camera)
    return image


def render_control_images(polylines, boxes, camera: Camera) -> ControlImages:
    return ControlImages(
        map_image=rasterize_map(polylines, camera),
        semantic_box_image=rasterize_boxes_semantic(boxes, camera),
        orientation_box_image=rasterize_boxes_orientation(boxes, camera),
    )


def downsample_mask(m: VisibilityMask, factor: int) -> VisibilityMask:
    """Majority rule per factor x factor block; an exact half counts as 1."""
    factor = int(factor)
    if factor < 1:
        raise OutOfRangeValue(f"factor must be >= 1, got {factor}")
    mask = m.mask
    h, w = mask.shape
    if h % factor or w % factor:
        raise NonDivisibleFactor(f"factor {factor} does not divide {h}x{w}")
    if factor == 1:
        return VisibilityMask(mask.copy())
    blocks = mask.reshape(h // factor, factor, w // factor, factor)
    counts = blocks.sum(axis=(1, 3), dtype=np.int64)
    return VisibilityMask((2 * counts >= factor * factor).astype(np.uint8))


def polyline_from_json(obj: dict) -> MapPolyline:
    return MapPolyline(points=np.asarray(obj["points"], dtype=np.float64), layer=str(obj["layer"]))


def polyline_to_json(line: MapPolyline) -> dict:
    return {"layer": line.layer, "points": [[float(c) for c in p] for p in line.points]}


def box_from_json(obj: dict) -> ObjectBox:
    return ObjectBox(
        center=np.asarray(obj["center"], dtype=np.float64),
        size=tuple(float(s) for s in obj["size"]),
        yaw=float(obj["yaw"]),
        category=str(obj["category"]),
    )


def box_to_json(box: ObjectBox) -> dict:
    return {
        "category": box.category,
        "center": [float(c) for c in box.center],
        "size": [float(s) for s in box.size],
        "yaw": box.yaw,
    }
