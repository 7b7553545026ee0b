"""Geometric spine for point-cloud-consistent RGB-D scene generation.

Subpackage map:

core          camera/pose/image/cloud types, validation, JSON formats
projection    back-projection, z-buffered point rendering, PLY I/O
consistency   trimmed masked warp loss, gradient, dataset filtering
diffusion     DDPM sampler with warp-consistent score guidance
keyframes     keyframe selection and the autoregressive scene loop
conditioning  HD-map / box control rasterization, mask downsampling
depth_codec   16-bit fixed-range metric depth codec and VAE-style loss
interpolation between-keyframe condition rendering and stub refinement
sceneio       PNG codecs and the on-disk scene manifest
cli           command-line front end (see `scapegeom --help`)
"""

from .conditioning import (
    BOX_CATEGORIES,
    BOX_EDGES,
    CATEGORY_COLORS,
    EDGE_COLORS,
    LAYER_COLORS,
    MAP_LAYERS,
    ControlImages,
    MapPolyline,
    NonDivisibleFactor,
    ObjectBox,
    box_from_json,
    box_to_json,
    downsample_mask,
    polyline_from_json,
    polyline_to_json,
    rasterize_boxes_orientation,
    rasterize_boxes_semantic,
    rasterize_map,
    render_control_images,
)
from .consistency import (
    ConsistencyConfig,
    EmptyOverlap,
    TrimmedLoss,
    filter_dataset,
    warp_loss,
    warp_loss_detailed,
    warp_loss_gradient,
    warp_loss_gradient_batch,
)
from .core import (
    Camera,
    CameraIntrinsics,
    DimensionMismatch,
    NonOrthonormalRotation,
    OutOfRangeValue,
    PointCloud,
    Pose,
    RenderBundle,
    RgbdImage,
    ScapegeomError,
    Trajectory,
    ValidationError,
    VisibilityMask,
    camera_from_json,
    camera_to_json,
    load_camera,
    load_trajectory,
    require_valid,
    save_camera,
    save_trajectory,
    trajectory_from_json,
    trajectory_to_json,
    validate,
)
from .depth_codec import (
    DepthCodecConfig,
    NegativeDepth,
    channels_to_rgbd,
    decode_depth16,
    encode_depth16,
    normalize_depth,
    rgbd_to_channels,
    vae_loss,
)
from .diffusion import (
    AnalyticGaussianDenoiser,
    ClassifierFreeDenoiser,
    Denoiser,
    GuidanceConfig,
    NoiseSchedule,
    TimestepOutOfRange,
    WarpTarget,
    analytic_gaussian_denoiser,
    forward_sample,
    guided_score,
    noise_to_score,
    reverse_step,
    sample,
    sample_many,
    score_to_noise,
)
from .interpolation import (
    InterpolationRequest,
    refine_stub,
    render_interpolation_conditions,
)
from .keyframes import (
    CopyThroughGenerator,
    GeneratorFailure,
    KeyframeRecord,
    KeyframeSelectionConfig,
    SceneState,
    generate_scene,
    order_viewpoints,
    rotation_angle_degrees,
    select_keyframes,
)
from .parallel import parallel_map, thread_count
from .projection import (
    Z_NEAR,
    PlyFormatError,
    back_project,
    load_ply,
    merge_clouds,
    render_points,
    save_ply,
    transform_cloud,
)
from .sceneio import (
    CorruptManifest,
    MissingFile,
    load_depth_png,
    load_mask_png,
    load_rgb_png,
    read_scene,
    save_depth_png,
    save_mask_png,
    save_rgb_png,
    write_scene,
)

__version__ = "0.1.0"
