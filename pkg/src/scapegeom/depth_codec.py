"""Depth normalization, 16-bit encoding, and the weighted reconstruction loss.

Metric depth maps to [0, 1] by clamping at a configurable maximum range
(300 m by default) and dividing; the normalized value is stored as a
16-bit integer code. Depth 0 (the hole sentinel) maps to code 0 and back
to exactly 0 m, so holes survive the codec unchanged.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import DimensionMismatch, OutOfRangeValue, RgbdImage, ScapegeomError

__all__ = [
    "DepthCodecConfig",
    "NegativeDepth",
    "normalize_depth",
    "encode_depth16",
    "decode_depth16",
    "rgbd_to_channels",
    "channels_to_rgbd",
    "vae_loss",
]

MAX_CODE = 65535


class NegativeDepth(ScapegeomError):
    pass


@dataclass(frozen=True)
class DepthCodecConfig:
    """max_depth: clamp range in meters; codes span 16 bits."""

    max_depth: float = 300.0
    bit_depth: int = 16

    def __post_init__(self):
        if not self.max_depth > 0:
            raise OutOfRangeValue(f"max_depth must be positive, got {self.max_depth}")
        if self.bit_depth != 16:
            raise OutOfRangeValue("only 16-bit codes are supported")


def _check_nonnegative(depth: np.ndarray):
    if np.any(depth < 0):
        raise NegativeDepth("depth values must be >= 0")


def normalize_depth(depth, cfg: DepthCodecConfig = DepthCodecConfig()):
    """min(d, max_depth) / max_depth; clamps beyond-range depths to 1."""
    d = np.asarray(depth, dtype=np.float64)
    _check_nonnegative(d)
    out = np.minimum(d, cfg.max_depth) / cfg.max_depth
    return out if out.ndim else float(out)


def encode_depth16(depth, cfg: DepthCodecConfig = DepthCodecConfig()) -> np.ndarray:
    """Quantize meters to uint16 codes: round(normalized * 65535), half up."""
    norm = np.asarray(normalize_depth(depth, cfg))
    return np.floor(norm * MAX_CODE + 0.5).astype(np.uint16)

def decode_depth16(codes, cfg: DepthCodecConfig = DepthCodecConfig()) -> np.ndarray:
    """Invert encode_depth16: code / 65535 * max_depth."""
    c = np.asarray(codes, dtype=np.float64)
    return c / MAX_CODE * cfg.max_depth


def rgbd_to_channels(image: RgbdImage, cfg: DepthCodecConfig = DepthCodecConfig()) -> np.ndarray:
    """Stack an RGB-D image into an (H, W, 4) array with normalized depth last."""
    return np.concatenate(
        [image.rgb, np.asarray(normalize_depth(image.depth, cfg))[..., None]], axis=2
    )


def channels_to_rgbd(channels: np.ndarray, cfg: DepthCodecConfig = DepthCodecConfig()) -> RgbdImage:
    """Invert rgbd_to_channels; values are clipped back into their valid ranges."""
    ch = np.asarray(channels, dtype=np.float64)
    if ch.ndim != 3 or ch.shape[2] != 4:
        raise DimensionMismatch(f"expected (H, W, 4) channels, got {ch.shape}")
    rgb = np.clip(ch[..., :3], 0.0, 1.0)
    depth = np.clip(ch[..., 3], 0.0, 1.0) * cfg.max_depth
    return RgbdImage(rgb, depth)


def vae_loss(
    recon_rgb: np.ndarray,
    recon_depth: np.ndarray,
    target: RgbdImage,
    kl_term: float,
    lambda_depth: float = 10.0,
    cfg: DepthCodecConfig = DepthCodecConfig(),
) -> float:
    """MSE(rgb) + lambda_depth * MSE(normalized depth) + kl_term.

    recon_depth is expected in normalized [0, 1] units; the target's
    metric depth is normalized with the same codec before comparison.
    """
    if lambda_depth < 0:
        raise OutOfRangeValue(f"lambda_depth must be >= 0, got {lambda_depth}")
    rr = np.asarray(recon_rgb, dtype=np.float64)
    rd = np.asarray(recon_depth, dtype=np.float64)
    if rr.shape != target.rgb.shape:
        raise DimensionMismatch(f"recon rgb {rr.shape} vs target {target.rgb.shape}")
    if rd.shape != target.depth.shape:
        raise DimensionMismatch(f"recon depth {rd.shape} vs target {target.depth.shape}")
    rgb_term = float(np.mean((rr - target.rgb) ** 2))
    depth_term = float(np.mean((rd - normalize_depth(target.depth, cfg)) ** 2))
    return rgb_term + lambda_depth * depth_term + float(kl_term)
