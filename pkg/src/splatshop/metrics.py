"""Quantitative evaluation: silhouette IoU, PSNR, SSIM over white-background
ground truth."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import raster
from .ssim import ssim as _ssim_impl
from .camera import CameraPose
from .errors import ArgumentError
from .gaussians import GaussianCloud
from .rig import BodyPose, Skeleton

SILHOUETTE_THRESHOLD = 0.5
PSNR_CAP = 100.0  # dB, reported for (near-)identical images


@dataclass
class EvalFrame:
    """Ground truth for one view: white-background image + actor mask."""

    image: np.ndarray  # (H, W, 3) in [0, 1]
    mask: np.ndarray  # (H, W) bool
    body_pose: BodyPose
    camera_pose: CameraPose

    def __post_init__(self):
        img = np.asarray(self.image, dtype=np.float64)
        mask = np.asarray(self.mask).astype(bool)
        if img.shape[:2] != mask.shape:
            raise ArgumentError(
                f"eval frame image {img.shape} and mask {mask.shape} disagree"
            )
        self.image = img
        self.mask = mask


def silhouette_mask(
    cloud: GaussianCloud,
    cam: CameraPose,
    skeleton: Skeleton | None = None,
    body_pose: BodyPose | None = None,
    threshold: float = SILHOUETTE_THRESHOLD,
) -> np.ndarray:
    """Pixels whose accumulated alpha reaches the threshold."""
    image = raster.rasterize(cloud, cam, skeleton=skeleton, body_pose=body_pose)
    return image.accumulated_alpha >= threshold


def iou(a: np.ndarray, b: np.ndarray) -> float:
    """Intersection over union of two binary masks; both empty -> 1."""
    a = np.asarray(a).astype(bool)
    b = np.asarray(b).astype(bool)
    if a.shape != b.shape:
        raise ArgumentError(f"mask shapes differ: {a.shape} vs {b.shape}")
    union = np.logical_or(a, b).sum()
    if union == 0:
        return 1.0
    return float(np.logical_and(a, b).sum() / union)


def psnr(a: np.ndarray, b: np.ndarray, data_range: float = 1.0) -> float:
    """10 log10(d^2 / MSE), capped at 100 dB for (near-)identical images."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ArgumentError(f"image shapes differ: {a.shape} vs {b.shape}")
    mse = float(np.mean((a - b) ** 2))
    if mse < 1e-10:
        return PSNR_CAP
    return min(PSNR_CAP, float(10.0 * np.log10(data_range**2 / mse)))


def ssim(a: np.ndarray, b: np.ndarray, data_range: float = 1.0) -> float:
    return _ssim_impl(a, b, data_range=data_range)


def evaluate(
    cloud: GaussianCloud,
    skeleton: Skeleton,
    frames: list[EvalFrame],
    threshold: float = SILHOUETTE_THRESHOLD,
) -> dict:
    """Render every frame pose over white and score against ground truth.

    Returns {"frames": [{iou, psnr, ssim}, ...], "mean_iou", "mean_psnr",
    "mean_ssim"}; plain floats throughout so the report round-trips JSON.
    """
    if not frames:
        raise ArgumentError("evaluation needs at least one frame")
    rows = []
    for fr in frames:
        image = raster.rasterize(
            cloud,
            fr.camera_pose,
            skeleton=skeleton,
            body_pose=fr.body_pose,
            background=raster.WHITE,
        )
        rows.append(
            {
                "iou": iou(image.accumulated_alpha >= threshold, fr.mask),
                "psnr": psnr(image.pixels, fr.image),
                "ssim": ssim(image.pixels, fr.image),
            }
        )
    return {
        "frames": rows,
        "mean_iou": float(np.mean([r["iou"] for r in rows])),
        "mean_psnr": float(np.mean([r["psnr"] for r in rows])),
        "mean_ssim": float(np.mean([r["ssim"] for r in rows])),
    }
