"""Command-line surface: one subcommand per core operation.

Exit status: 0 on success, 1 on a domain error (reported as one JSON
line on stderr with the error type and message), 2 on a usage error
(argparse reports the offending flag). The only stochastic subcommand
is `sample`, which requires --seed; every run is deterministic given
its arguments.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .conditioning import box_from_json, polyline_from_json, render_control_images
from .consistency import ConsistencyConfig, filter_dataset, warp_loss_detailed
from .core import RgbdImage, ScapegeomError, load_camera, load_trajectory, require_valid
from .depth_codec import DepthCodecConfig
from .diffusion import (
    GuidanceConfig,
    NoiseSchedule,
    WarpTarget,
    analytic_gaussian_denoiser,
    sample_many,
)
from .interpolation import InterpolationRequest, refine_stub, render_interpolation_conditions
from .keyframes import (
    CopyThroughGenerator,
    KeyframeSelectionConfig,
    generate_scene,
    select_keyframes,
)
from .projection import back_project, load_ply, render_points, save_ply
from .sceneio import (
    load_depth_png,
    load_mask_png,
    load_rgb_png,
    save_depth_png,
    save_mask_png,
    save_rgb_png,
    write_scene,
)

__all__ = ["PipelineConfig", "run_cli", "main"]


@dataclass(frozen=True)
class PipelineConfig:
    """Bundle of the component configs plus paths for the pipeline command."""

    selection: KeyframeSelectionConfig
    codec: DepthCodecConfig
    generator: str
    initial_rgb: Path
    initial_depth: Path
    initial_camera: Path
    trajectory: Path
    output: Path


def _emit(obj) -> None:
    print(json.dumps(obj))


def _load_rgbd(rgb_path, depth_path, codec: DepthCodecConfig) -> RgbdImage:
    image = RgbdImage(load_rgb_png(rgb_path), load_depth_png(depth_path, codec))
    require_valid(image)
    return image


def _cmd_backproject(args) -> int:
    codec = DepthCodecConfig(max_depth=args.max_depth)
    image = _load_rgbd(args.rgb, args.depth, codec)
    cloud = back_project(image, load_camera(args.camera))
    save_ply(args.output, cloud)
    _emit({"points": len(cloud), "output": str(args.output)})
    return 0


def _cmd_render(args) -> int:
    codec = DepthCodecConfig(max_depth=args.max_depth)
    bundle = render_points(load_ply(args.cloud), load_camera(args.camera), splat_radius=args.splat_radius)
    save_rgb_png(args.rgb, bundle.image.rgb)
    save_depth_png(args.depth, bundle.image.depth, codec)
    save_mask_png(args.mask, bundle.mask)
    _emit({"visible_pixels": bundle.mask.count()})
    return 0


def _cmd_loss(args) -> int:
    codec = DepthCodecConfig(max_depth=args.max_depth)
    cfg = ConsistencyConfig(trim_fraction=args.trim, depth_weight=args.depth_weight)
    detail = warp_loss_detailed(
        _load_rgbd(args.rgb_a, args.depth_a, codec),
        _load_rgbd(args.rgb_b, args.depth_b, codec),
        load_mask_png(args.mask),
        cfg,
        codec,
    )
    _emit(
        {
            "loss": detail.loss,
            "kept_pixels": detail.kept_pixels,
            "trimmed_pixels": detail.trimmed_pixels,
        }
    )
    return 0


def _cmd_filter(args) -> int:
    losses = json.loads(Path(args.losses).read_text())
    kept = filter_dataset(losses, args.drop_fraction)
    _emit({"kept_indices": kept})
    return 0


def _cmd_select_keyframes(args) -> int:
    cfg = KeyframeSelectionConfig(beta=args.beta, gamma=args.gamma)
    indices = select_keyframes(load_trajectory(args.trajectory), cfg)
    _emit(indices)
    return 0


def _cmd_pipeline(args) -> int:
    cfg = PipelineConfig(
        selection=KeyframeSelectionConfig(beta=args.beta, gamma=args.gamma),
        codec=DepthCodecConfig(max_depth=args.max_depth),
        generator=args.generator,
        initial_rgb=Path(args.initial_rgb),
        initial_depth=Path(args.initial_depth),
        initial_camera=Path(args.initial_camera),
        trajectory=Path(args.trajectory),
        output=Path(args.output),
    )
    traj = load_trajectory(cfg.trajectory)
    camera = load_camera(cfg.initial_camera)
    image = _load_rgbd(cfg.initial_rgb, cfg.initial_depth, cfg.codec)
    indices = select_keyframes(traj, cfg.selection)
    generator = CopyThroughGenerator(fill_gray=args.fill_gray / 255.0, fill_depth=cfg.codec.max_depth)
    state = generate_scene(image, camera, traj, indices, generator, codec=cfg.codec)
    manifest = write_scene(state, cfg.output, cfg.codec)
    _emit(
        {
            "manifest": str(manifest),
            "keyframes": indices,
            "visit_order": list(state.visit_order),
            "warp_losses": {str(r.index): r.warp_loss_value for r in state.keyframes},
        }
    )
    return 0


def _cmd_rasterize(args) -> int:
    elements = json.loads(Path(args.elements).read_text())
    polylines = [polyline_from_json(p) for p in elements.get("polylines", [])]
    boxes = [box_from_json(b) for b in elements.get("boxes", [])]
    controls = render_control_images(polylines, boxes, load_camera(args.camera))
    save_rgb_png(args.map_output, controls.map_image)
    save_rgb_png(args.semantic_output, controls.semantic_box_image)
    save_rgb_png(args.orientation_output, controls.orientation_box_image)
    _emit({"polylines": len(polylines), "boxes": len(boxes)})
    return 0


def _load_keyframe_dir(directory, codec: DepthCodecConfig):
    d = Path(directory)
    image = _load_rgbd(d / "rgb.png", d / "depth.png", codec)
    return image, load_camera(d / "camera.json")


def _cmd_interpolate(args) -> int:
    codec = DepthCodecConfig(max_depth=args.max_depth)
    k1_image, k1_camera = _load_keyframe_dir(args.k1, codec)
    k2_image, k2_camera = _load_keyframe_dir(args.k2, codec)
    traj = load_trajectory(args.trajectory)
    request = InterpolationRequest(
        k1_image=k1_image,
        k1_camera=k1_camera,
        k2_image=k2_image,
        k2_camera=k2_camera,
        intermediate_cameras=tuple(traj.camera(i) for i in range(len(traj.poses))),
    )
    bundles = render_interpolation_conditions(request)
    refined = refine_stub(bundles) if args.refine else None

    out = Path(args.output)
    out.mkdir(parents=True, exist_ok=True)
    frames = []
    for t, bundle in enumerate(bundles):
        names = {"rgb": f"frame_{t:04d}_rgb.png", "mask": f"frame_{t:04d}_mask.png"}
        save_rgb_png(out / names["rgb"], bundle.image.rgb)
        save_mask_png(out / names["mask"], bundle.mask)
        if refined is not None:
            names["refined_rgb"] = f"frame_{t:04d}_refined_rgb.png"
            save_rgb_png(out / names["refined_rgb"], refined[t].rgb)
        frames.append(names)
    manifest = {"format": "scapegeom-interpolation", "version": 1, "frames": frames}
    (out / "frames.json").write_text(json.dumps(manifest, indent=2))
    _emit({"frames": len(frames), "output": str(out)})
    return 0


def _cmd_sample(args) -> int:
    schedule = NoiseSchedule.linear(args.beta_start, args.beta_end, args.timesteps)
    denoiser = analytic_gaussian_denoiser(args.mu, args.sigma, schedule)
    shape = tuple(args.shape)
    guidance = None
    condition = None
    if args.guidance_w > 0.0:
        condition = WarpTarget(
            reference=np.full(shape, args.target, dtype=np.float64),
            mask=np.ones(shape, dtype=np.uint8),
        )
        guidance = GuidanceConfig(
            w=args.guidance_w,
            consistency=ConsistencyConfig(trim_fraction=args.trim),
        )
    samples = sample_many(
        denoiser,
        schedule,
        count=args.count,
        shape=shape,
        condition=condition,
        guidance=guidance,
        seed=args.seed,
    )
    summary = {
        "count": int(args.count),
        "shape": list(shape),
        "mean": float(samples.mean()),
        "std": float(samples.std()),
    }
    if args.output:
        payload = dict(summary)
        payload["samples"] = samples.tolist()
        Path(args.output).write_text(json.dumps(payload))
        summary["output"] = str(args.output)
    _emit(summary)
    return 0


def _add_max_depth(p: argparse.ArgumentParser) -> None:
    p.add_argument("--max-depth", type=float, default=300.0, help="depth codec range in meters")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="scapegeom",
        description="Point-cloud-consistent RGB-D scene tooling.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("backproject", help="lift an RGB-D frame into a world point cloud")
    p.add_argument("--rgb", required=True)
    p.add_argument("--depth", required=True)
    p.add_argument("--camera", required=True)
    p.add_argument("--output", required=True, help="output PLY path")
    _add_max_depth(p)
    p.set_defaults(func=_cmd_backproject)

    p = sub.add_parser("render", help="z-buffer a point cloud into a camera")
    p.add_argument("--cloud", required=True, help="input PLY path")
    p.add_argument("--camera", required=True)
    p.add_argument("--rgb", required=True, help="output color PNG")
    p.add_argument("--depth", required=True, help="output 16-bit depth PNG")
    p.add_argument("--mask", required=True, help="output visibility PNG")
    p.add_argument("--splat-radius", type=int, default=0)
    _add_max_depth(p)
    p.set_defaults(func=_cmd_render)

    p = sub.add_parser("loss", help="trimmed masked consistency loss between two frames")
    p.add_argument("--rgb-a", required=True)
    p.add_argument("--depth-a", required=True)
    p.add_argument("--rgb-b", required=True)
    p.add_argument("--depth-b", required=True)
    p.add_argument("--mask", required=True)
    p.add_argument("--trim", type=float, default=0.05)
    p.add_argument("--depth-weight", type=float, default=1.0)
    _add_max_depth(p)
    p.set_defaults(func=_cmd_loss)

    p = sub.add_parser("filter", help="drop the highest-loss fraction of a loss list")
    p.add_argument("--losses", required=True, help="JSON file with an array of numbers")
    p.add_argument("--drop-fraction", type=float, default=0.2)
    p.set_defaults(func=_cmd_filter)

    p = sub.add_parser("select-keyframes", help="threshold scan over a trajectory")
    p.add_argument("--trajectory", required=True)
    p.add_argument("--beta", type=float, default=10.0, help="distance threshold in meters")
    p.add_argument("--gamma", type=float, default=20.0, help="rotation threshold in degrees")
    p.set_defaults(func=_cmd_select_keyframes)

    p = sub.add_parser("pipeline", help="generate-render-accumulate over a trajectory")
    p.add_argument("--initial-rgb", required=True)
    p.add_argument("--initial-depth", required=True)
    p.add_argument("--initial-camera", required=True)
    p.add_argument("--trajectory", required=True)
    p.add_argument("--output", required=True, help="scene output directory")
    p.add_argument("--beta", type=float, default=10.0)
    p.add_argument("--gamma", type=float, default=20.0)
    p.add_argument("--generator", choices=["copy"], default="copy")
    p.add_argument("--fill-gray", type=int, default=128, help="hole fill level, 0..255")
    _add_max_depth(p)
    p.set_defaults(func=_cmd_pipeline)

    p = sub.add_parser("rasterize", help="map and box control images")
    p.add_argument("--elements", required=True, help='JSON file {"polylines": [...], "boxes": [...]}')
    p.add_argument("--camera", required=True)
    p.add_argument("--map-output", required=True)
    p.add_argument("--semantic-output", required=True)
    p.add_argument("--orientation-output", required=True)
    p.set_defaults(func=_cmd_rasterize)

    p = sub.add_parser("interpolate", help="render conditions between two keyframes")
    p.add_argument("--k1", required=True, help="directory with rgb.png, depth.png, camera.json")
    p.add_argument("--k2", required=True, help="directory with rgb.png, depth.png, camera.json")
    p.add_argument("--trajectory", required=True, help="intermediate cameras")
    p.add_argument("--output", required=True)
    p.add_argument("--refine", action="store_true", help="also write stub-refined frames")
    _add_max_depth(p)
    p.set_defaults(func=_cmd_interpolate)

    p = sub.add_parser("sample", help="ancestral sampling against the Gaussian oracle")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--count", type=int, default=1)
    p.add_argument("--shape", type=int, nargs="+", default=[1])
    p.add_argument("--timesteps", type=int, default=50)
    p.add_argument("--beta-start", type=float, default=1e-4)
    p.add_argument("--beta-end", type=float, default=0.02)
    p.add_argument("--mu", type=float, default=0.0)
    p.add_argument("--sigma", type=float, default=1.0)
    p.add_argument("--guidance-w", type=float, default=0.0)
    p.add_argument("--target", type=float, default=0.0, help="constant guidance reference")
    p.add_argument("--trim", type=float, default=0.0)
    p.add_argument("--output", default=None, help="optional JSON file for the raw samples")
    p.set_defaults(func=_cmd_sample)

    return parser


def run_cli(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        code = exc.code
        if isinstance(code, int):
            return code
        return 0 if code is None else 2
    try:
        return args.func(args)
    except ScapegeomError as exc:
        print(json.dumps({"error": type(exc).__name__, "message": str(exc)}), file=sys.stderr)
        return 1


def main() -> None:
    raise SystemExit(run_cli(sys.argv[1:]))
