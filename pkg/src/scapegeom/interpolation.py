"""Dense conditioning frames between two consecutive keyframes.

Only the two bracketing keyframes feed the interpolation: their
back-projections merge into a small cloud that is rendered at each
intermediate camera. The resulting bundles are rgb + visibility
conditions; their depth channel is a z-buffer byproduct and is not part
of the interpolation output contract (the CLI writes rgb and mask
only).

refine_stub stands in for a learned video refiner: it fills each hole
with the color of the nearest valid pixel (squared Euclidean distance
on the pixel grid; ties prefer the smaller row, then the smaller
column) and never touches a pixel the mask marks as valid. A frame with
no valid pixels at all falls back to mid-gray.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import (
    Camera,
    DimensionMismatch,
    RenderBundle,
    RgbdImage,
    ValidationError,
    require_valid,
)
from .parallel import parallel_map
from .projection import back_project, merge_clouds, render_points

__all__ = [
    "InterpolationRequest",
    "render_interpolation_conditions",
    "refine_stub",
]


@dataclass(frozen=True)
class InterpolationRequest:
    k1_image: RgbdImage
    k1_camera: Camera
    k2_image: RgbdImage
    k2_camera: Camera
    intermediate_cameras: tuple

    def __post_init__(self):
        object.__setattr__(self, "intermediate_cameras", tuple(self.intermediate_cameras))
        if len(self.intermediate_cameras) < 1:
            raise ValidationError("at least one intermediate camera is required")
        for image, camera in ((self.k1_image, self.k1_camera), (self.k2_image, self.k2_camera)):
            require_valid(image)
            require_valid(camera)
            k = camera.intrinsics
            if image.depth.shape != (k.height, k.width):
                raise DimensionMismatch(
                    f"keyframe image {image.depth.shape} does not fit its "
                    f"camera ({k.height}, {k.width})"
                )
        for cam in self.intermediate_cameras:
            require_valid(cam)

    @property
    def frame_count(self) -> int:
        return len(self.intermediate_cameras)


def render_interpolation_conditions(req: InterpolationRequest) -> list[RenderBundle]:
    """One RenderBundle per intermediate camera, in camera order.

    Frames are independent, so they may render on multiple threads; the
    returned list order always follows the request.
    """
    cloud = merge_clouds(
        [
            back_project(req.k1_image, req.k1_camera, source_index=0),
            back_project(req.k2_image, req.k2_camera, source_index=1),
        ]
    )
    return parallel_map(lambda cam: render_points(cloud, cam), list(req.intermediate_cameras))


_FALLBACK_GRAY = 0.5
_CHUNK = 4096


def _nearest_valid_fill(rgb: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Fill mask==0 pixels from the nearest mask==1 pixel, exactly."""
    h, w = mask.shape
    valid_r, valid_c = np.nonzero(mask)
    hole_r, hole_c = np.nonzero(~mask)
    out = rgb.copy()
    if hole_r.size == 0:
        return out
    if valid_r.size == 0:
        out[:] = _FALLBACK_GRAY
        return out
    # key = (d^2 * h + row) * w + col makes argmin resolve ties by
    # smaller row then smaller column without a separate pass
    vr = valid_r.astype(np.int64)
    vc = valid_c.astype(np.int64)
    for start in range(0, hole_r.size, _CHUNK):
        hr = hole_r[start : start + _CHUNK].astype(np.int64)
        hc = hole_c[start : start + _CHUNK].astype(np.int64)
        d2 = (hr[:, None] - vr[None, :]) ** 2 + (hc[:, None] - vc[None, :]) ** 2
        key = (d2 * h + vr[None, :]) * w + vc[None, :]
        j = np.argmin(key, axis=1)
        out[hr, hc] = rgb[valid_r[j], valid_c[j]]
    return out


def refine_stub(bundles: list[RenderBundle]) -> list[RgbdImage]:
    """Deterministic hole fill; see module docstring for the exact rule."""
    refined = []
    for bundle in bundles:
        mask = bundle.mask.mask != 0
        rgb = _nearest_valid_fill(bundle.image.rgb, mask)
        refined.append(RgbdImage(rgb, bundle.image.depth.copy()))
    return refined
