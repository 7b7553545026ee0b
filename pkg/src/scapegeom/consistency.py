"""Warp-consistency loss with outlier trimming, its gradient, and filtering.

The loss compares a candidate image x against a rendered reference h on
the pixels a visibility mask marks as observed. Each masked pixel gets a
residual: the weighted mean over channels of the squared difference.
For RGB-D inputs the channels are (r, g, b, normalized depth) with unit
color weights and a configurable depth weight. The largest
ceil(trim_fraction * K) residuals are discarded (K = masked pixel
count) and the loss is the mean of the survivors.

Trimming ties are deterministic: equal residuals are ordered by
flattened pixel index and the higher index is trimmed first, matching
the convention of filter_dataset.

Inputs may be RgbdImage instances or plain arrays. Arrays are treated
as single-channel unless their last axis adds one dimension over the
mask, in which case that axis is the channel axis. Per-channel weights
are all ones except for the 4-channel RGB-D layout, where the last
channel uses depth_weight.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import DimensionMismatch, OutOfRangeValue, RgbdImage, ScapegeomError, VisibilityMask
from .depth_codec import DepthCodecConfig, rgbd_to_channels

__all__ = [
    "ConsistencyConfig",
    "EmptyOverlap",
    "TrimmedLoss",
    "warp_loss",
    "warp_loss_detailed",
    "warp_loss_gradient",
    "warp_loss_gradient_batch",
    "filter_dataset",
]


class EmptyOverlap(ScapegeomError):
    pass


@dataclass(frozen=True)
class ConsistencyConfig:
    """trim_fraction: share of masked pixels dropped (largest residuals);
    depth_weight: weight of the depth channel relative to one color channel."""

    trim_fraction: float = 0.05
    depth_weight: float = 1.0

    def __post_init__(self):
        if not 0.0 <= self.trim_fraction < 1.0:
            raise OutOfRangeValue(f"trim_fraction must lie in [0, 1), got {self.trim_fraction}")
        if self.depth_weight < 0.0:
            raise OutOfRangeValue(f"depth_weight must be >= 0, got {self.depth_weight}")

    def channel_weights(self, channels: int) -> np.ndarray:
        w = np.ones(channels, dtype=np.float64)
        if channels == 4:
            w[3] = self.depth_weight
        return w


@dataclass(frozen=True)
class TrimmedLoss:
    """Loss value plus the bookkeeping the CLI and gradient need."""

    loss: float
    kept_pixels: int
    trimmed_pixels: int
    survivor_mask: np.ndarray  # (H, W) or mask-shaped bool array, True at survivors


def _as_channels(x, mask_shape: tuple, cfg: ConsistencyConfig, codec: DepthCodecConfig):
    """Coerce x to (mask_shape, C) float array plus per-channel weights."""
    if isinstance(x, RgbdImage):
        arr = rgbd_to_channels(x, codec)
    else:
        arr = np.asarray(x, dtype=np.float64)
        if arr.shape == mask_shape:
            arr = arr[..., None]
    if arr.shape[:-1] != mask_shape:
        raise DimensionMismatch(f"image shape {arr.shape} does not match mask {mask_shape}")
    return arr, cfg.channel_weights(arr.shape[-1])


def _mask_array(m) -> np.ndarray:
    mask = m.mask if isinstance(m, VisibilityMask) else np.asarray(m)
    return mask != 0


def warp_loss_detailed(
    x,
    h,
    m,
    cfg: ConsistencyConfig = ConsistencyConfig(),
    codec: DepthCodecConfig = DepthCodecConfig(),
) -> TrimmedLoss:
    """Trimmed masked consistency loss with survivor bookkeeping."""
    mask = _mask_array(m)
    xa, weights = _as_channels(x, mask.shape, cfg, codec)
    ha, _ = _as_channels(h, mask.shape, cfg, codec)
    if xa.shape != ha.shape:
        raise DimensionMismatch(f"x {xa.shape} and h {ha.shape} disagree")

    flat_idx = np.nonzero(mask.reshape(-1))[0]
    k = flat_idx.size
    if k == 0:
        raise EmptyOverlap("mask selects no pixels")

    diff = xa.reshape(-1, xa.shape[-1])[flat_idx] - ha.reshape(-1, ha.shape[-1])[flat_idx]
    # last-axis sum keeps a fixed left-to-right reduction order, so the
    # loss is reproducible bit for bit across BLAS builds
    residuals = (diff * diff * weights).sum(axis=1) / weights.size

    n_trim = math.ceil(cfg.trim_fraction * k)
    n_keep = k - n_trim
    if n_keep <= 0:
        raise EmptyOverlap(f"trimming removes all {k} masked pixels")

    # stable ascending sort: equal residuals stay in pixel order, so the
    # higher pixel index falls into the trimmed tail first
    order = np.argsort(residuals, kind="stable")
    keep = order[:n_keep]

    survivor = np.zeros(mask.size, dtype=bool)
    survivor[flat_idx[keep]] = True
    return TrimmedLoss(
        loss=float(residuals[keep].mean()),
        kept_pixels=int(n_keep),
        trimmed_pixels=int(n_trim),
        survivor_mask=survivor.reshape(mask.shape),
    )


def warp_loss(
    x,
    h,
    m,
    cfg: ConsistencyConfig = ConsistencyConfig(),
    codec: DepthCodecConfig = DepthCodecConfig(),
) -> float:
    """Mean surviving residual; see module docstring for the exact rule."""
    return warp_loss_detailed(x, h, m, cfg, codec).loss


def warp_loss_gradient(
    x,
    h,
    m,
    cfg: ConsistencyConfig = ConsistencyConfig(),
    codec: DepthCodecConfig = DepthCodecConfig(),
) -> np.ndarray:
    """Analytic gradient of warp_loss w.r.t. x's channel representation.

    The trimmed set is treated as fixed at the current x (subgradient
    convention). Entries are 2 * w_c * (x - h) / (channels * kept) at
    surviving pixels and exactly zero at unmasked and trimmed pixels.
    Shape is (H, W, C) for image-like inputs or x's own shape for
    single-channel arrays.
    """
    mask = _mask_array(m)
    xa, weights = _as_channels(x, mask.shape, cfg, codec)
    ha, _ = _as_channels(h, mask.shape, cfg, codec)
    detail = warp_loss_detailed(x, h, m, cfg, codec)

    grad = np.zeros_like(xa)
    surv = detail.survivor_mask
    grad[surv] = 2.0 * weights * (xa[surv] - ha[surv]) / (weights.size * detail.kept_pixels)
    if not isinstance(x, RgbdImage) and np.asarray(x).shape == mask.shape:
        return grad[..., 0]
    return grad


def warp_loss_gradient_batch(
    x_batch: np.ndarray,
    h: np.ndarray,
    m,
    cfg: ConsistencyConfig = ConsistencyConfig(),
) -> np.ndarray:
    """Per-trajectory warp_loss_gradient over a leading batch axis.

    x_batch has shape (B, *mask.shape) single-channel; h broadcasts to
    mask.shape. Each batch row is normalized by its own survivor count,
    so the result equals stacking warp_loss_gradient over the rows.
    """
    mask = _mask_array(m)
    x = np.asarray(x_batch, dtype=np.float64)
    if x.shape[1:] != mask.shape:
        raise DimensionMismatch(f"batch rows {x.shape[1:]} do not match mask {mask.shape}")
    b = x.shape[0]
    hv = np.broadcast_to(np.asarray(h, dtype=np.float64), mask.shape).reshape(-1)
    flat_idx = np.nonzero(mask.reshape(-1))[0]
    k = flat_idx.size
    if k == 0:
        raise EmptyOverlap("mask selects no pixels")
    n_trim = math.ceil(cfg.trim_fraction * k)
    n_keep = k - n_trim
    if n_keep <= 0:
        raise EmptyOverlap(f"trimming removes all {k} masked pixels")

    diff = x.reshape(b, -1)[:, flat_idx] - hv[flat_idx]
    grad_rows = np.zeros((b, mask.size), dtype=np.float64)
    if n_trim == 0:
        grad_rows[:, flat_idx] = 2.0 * diff / n_keep
    else:
        residuals = diff * diff
        order = np.argsort(residuals, axis=1, kind="stable")
        keep = order[:, :n_keep]
        rows = np.repeat(np.arange(b), n_keep)
        cols = flat_idx[keep.reshape(-1)]
        grad_rows[rows, cols] = 2.0 * diff[np.arange(b)[:, None], keep].reshape(-1) / n_keep
    return grad_rows.reshape(x.shape)


def filter_dataset(losses, drop_fraction: float) -> list:
    """Drop the floor(drop_fraction * N) largest losses; keep original order.

    Ties at the drop boundary resolve by index: among equal losses the
    higher index is dropped first.
    """
    if not 0.0 <= drop_fraction < 1.0:
        raise OutOfRangeValue(f"drop_fraction must lie in [0, 1), got {drop_fraction}")
    values = [float(v) for v in losses]
    n = len(values)
    n_drop = math.floor(drop_fraction * n)
    if n_drop == 0:
        return list(range(n))
    # ascending stable sort keeps ties in index order; the tail is dropped,
    # so the higher index of a tied pair goes first
    order = sorted(range(n), key=lambda i: values[i])
    kept = sorted(order[: n - n_drop])
    return kept
