"""Interactive refinement workbench for Gaussian-splat avatars.

The library covers the full loop: rasterize a skinned Gaussian cloud,
track per-Gaussian visibility across a dataset, suggest the body and
camera pose that best exposes under-observed Gaussians, fold 2D image
edits back into the cloud with masked fine-tuning and targeted deletion,
and score the result. `splatshop.cli` drives everything headlessly and
`splatshop.service` exposes it over HTTP.
"""

from .camera import CameraPose, look_at
from .errors import (
    ArgumentError,
    ConfigError,
    ConflictError,
    DataError,
    GatewayError,
    NonFiniteError,
    SplatError,
    StateError,
)
from .gaussians import Gaussian, GaussianCloud
from .metrics import EvalFrame, evaluate, iou, psnr, silhouette_mask
from .raster import RenderedImage, composite_pixel, project_gaussian, rasterize, visibility_map
from .rig import (
    BodyPose,
    PoseDecoder,
    PoseLatent,
    Skeleton,
    canonical_pose,
    default_decoder,
    default_skeleton,
    forward_kinematics,
    lbs_deform,
)
from .ssim import ssim
from .suggest import CameraParams, SuggestConfig, Suggestion, suggest_pose
from .training import (
    TrainConfig,
    delete_background_gaussians,
    densify,
    finetune_step,
    image_loss,
    masked_loss,
    prune,
    run_finetune,
)
from .visibility import EditedFrame, Frame, VisibilityLedger, accumulate, mean_visibility

__version__ = "0.1.0"

__all__ = [
    "ArgumentError",
    "BodyPose",
    "CameraParams",
    "CameraPose",
    "ConfigError",
    "ConflictError",
    "DataError",
    "EditedFrame",
    "EvalFrame",
    "Frame",
    "GatewayError",
    "Gaussian",
    "GaussianCloud",
    "NonFiniteError",
    "PoseDecoder",
    "PoseLatent",
    "RenderedImage",
    "Skeleton",
    "SplatError",
    "StateError",
    "SuggestConfig",
    "Suggestion",
    "TrainConfig",
    "VisibilityLedger",
    "accumulate",
    "canonical_pose",
    "composite_pixel",
    "default_decoder",
    "default_skeleton",
    "delete_background_gaussians",
    "densify",
    "evaluate",
    "finetune_step",
    "forward_kinematics",
    "image_loss",
    "iou",
    "lbs_deform",
    "look_at",
    "masked_loss",
    "mean_visibility",
    "project_gaussian",
    "prune",
    "psnr",
    "rasterize",
    "run_finetune",
    "silhouette_mask",
    "ssim",
    "suggest_pose",
    "visibility_map",
    "__version__",
]
