"""Image files and the on-disk scene layout.

A scene directory holds one manifest (scene.json), one merged binary
PLY cloud, and per keyframe an 8-bit RGB PNG, a 16-bit grayscale depth
PNG (metric depth through the fixed-range codec), and an 8-bit mask
PNG (255 = visible). The manifest records the codec range, the
generation visit order, per-keyframe camera parameters, filenames, and
the recorded per-step consistency loss.

Round-trip guarantees: depth within one codec quantum, colors already
on the 8-bit grid bit-exactly (arbitrary float colors land on the
nearest grid point), cloud positions within float32 rounding. Rendered
bundles are transient and not persisted; records read back from disk
carry bundle=None.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np
from PIL import Image

from .core import (
    RgbdImage,
    ScapegeomError,
    VisibilityMask,
    camera_from_json,
    camera_to_json,
)
from .depth_codec import DepthCodecConfig, decode_depth16, encode_depth16
from .keyframes import KeyframeRecord, SceneState
from .projection import load_ply, save_ply

__all__ = [
    "MissingFile",
    "CorruptManifest",
    "SCENE_FORMAT",
    "save_rgb_png",
    "load_rgb_png",
    "save_depth_png",
    "load_depth_png",
    "save_mask_png",
    "load_mask_png",
    "write_scene",
    "read_scene",
]

SCENE_FORMAT = "scapegeom-scene"
_SCENE_VERSION = 1
_MANIFEST_NAME = "scene.json"


class MissingFile(ScapegeomError):
    pass


class CorruptManifest(ScapegeomError):
    pass


def save_rgb_png(path, rgb: np.ndarray) -> None:
    """Quantize [0,1] floats to the 8-bit grid (half rounds up) and save."""
    arr = np.floor(np.clip(np.asarray(rgb), 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)
    Image.fromarray(arr, mode="RGB").save(path)


def load_rgb_png(path) -> np.ndarray:
    path = Path(path)
    if not path.is_file():
        raise MissingFile(str(path))
    with Image.open(path) as img:
        arr = np.asarray(img.convert("RGB"))
    return arr.astype(np.float64) / 255.0


def save_depth_png(path, depth: np.ndarray, codec: DepthCodecConfig = DepthCodecConfig()) -> None:
    codes = encode_depth16(depth, codec)
    Image.fromarray(codes).save(path)  # uint16 maps to a 16-bit grayscale PNG


def load_depth_png(path, codec: DepthCodecConfig = DepthCodecConfig()) -> np.ndarray:
    path = Path(path)
    if not path.is_file():
        raise MissingFile(str(path))
    with Image.open(path) as img:
        arr = np.asarray(img)
    if arr.dtype != np.uint16:
        if arr.min() < 0 or arr.max() > 65535:
            raise CorruptManifest(f"{path} is not a 16-bit depth image")
        arr = arr.astype(np.uint16)
    return decode_depth16(arr, codec)


def save_mask_png(path, mask: VisibilityMask) -> None:
    Image.fromarray((mask.mask != 0).astype(np.uint8) * 255, mode="L").save(path)


def load_mask_png(path) -> VisibilityMask:
    path = Path(path)
    if not path.is_file():
        raise MissingFile(str(path))
    with Image.open(path) as img:
        arr = np.asarray(img.convert("L"))
    return VisibilityMask((arr != 0).astype(np.uint8))


def _keyframe_mask(record: KeyframeRecord) -> VisibilityMask:
    if record.bundle is not None:
        return record.bundle.mask
    return VisibilityMask((record.image.depth > 0).astype(np.uint8))


def write_scene(state: SceneState, out_dir, codec: DepthCodecConfig = DepthCodecConfig()) -> Path:
    """Write the manifest, cloud, and per-keyframe images; returns the manifest path."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    save_ply(out / "cloud.ply", state.cloud)
    entries = []
    for record in state.keyframes:
        prefix = f"keyframe_{record.index:04d}"
        names = {
            "rgb": f"{prefix}_rgb.png",
            "depth": f"{prefix}_depth.png",
            "mask": f"{prefix}_mask.png",
        }
        save_rgb_png(out / names["rgb"], record.image.rgb)
        save_depth_png(out / names["depth"], record.image.depth, codec)
        save_mask_png(out / names["mask"], _keyframe_mask(record))
        entries.append(
            {
                "index": record.index,
                "camera": camera_to_json(record.camera),
                "warp_loss": record.warp_loss_value,
                **names,
            }
        )
    manifest = {
        "format": SCENE_FORMAT,
        "version": _SCENE_VERSION,
        "max_depth": codec.max_depth,
        "visit_order": list(state.visit_order),
        "cloud": "cloud.ply",
        "keyframes": entries,
    }
    manifest_path = out / _MANIFEST_NAME
    manifest_path.write_text(json.dumps(manifest, indent=2))
    return manifest_path


def read_scene(path) -> SceneState:
    """Load a scene directory (or its manifest file) back into memory."""
    path = Path(path)
    manifest_path = path / _MANIFEST_NAME if path.is_dir() else path
    if not manifest_path.is_file():
        raise MissingFile(str(manifest_path))
    base = manifest_path.parent
    try:
        manifest = json.loads(manifest_path.read_text())
    except json.JSONDecodeError as exc:
        raise CorruptManifest(f"{manifest_path}: {exc}") from exc
    if not isinstance(manifest, dict) or manifest.get("format") != SCENE_FORMAT:
        raise CorruptManifest(f"{manifest_path} lacks the {SCENE_FORMAT!r} format marker")
    try:
        codec = DepthCodecConfig(max_depth=float(manifest["max_depth"]))
        visit_order = tuple(int(i) for i in manifest["visit_order"])
        entries = manifest["keyframes"]
        cloud_name = manifest["cloud"]
    except (KeyError, TypeError, ValueError) as exc:
        raise CorruptManifest(f"{manifest_path}: {exc!r}") from exc

    records = []
    for entry in entries:
        try:
            camera = camera_from_json(entry["camera"])
            names = {k: entry[k] for k in ("rgb", "depth", "mask")}
            index = int(entry["index"])
            warp = entry["warp_loss"]
        except (KeyError, TypeError, ValueError) as exc:
            raise CorruptManifest(f"{manifest_path}: keyframe entry {exc!r}") from exc
        rgb = load_rgb_png(base / names["rgb"])
        depth = load_depth_png(base / names["depth"], codec)
        load_mask_png(base / names["mask"])  # existence + format check
        records.append(
            KeyframeRecord(
                index=index,
                camera=camera,
                image=RgbdImage(rgb, depth),
                bundle=None,
                warp_loss_value=None if warp is None else float(warp),
            )
        )
    cloud_path = base / cloud_name
    if not cloud_path.is_file():
        raise MissingFile(str(cloud_path))
    return SceneState(cloud=load_ply(cloud_path), keyframes=tuple(records), visit_order=visit_order)
