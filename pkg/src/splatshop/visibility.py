"""Per-Gaussian visibility accumulation and the pose-suggestion objective.

Visibility of Gaussian i in an image is its total compositing contribution
(sum over pixels of transmittance times alpha). The ledger averages that
vector over the input video frames and, with a small mix weight, over the
user-edited frames; Gaussians whose accumulated visibility sits below the
ledger mean are the under-observed ones a suggested pose should expose.

The objective for a candidate (latent, camera) is
``sum_i clip(V[i] - Vbar) * sigma_i`` with ``clip(x) = min(x, 0)`` and
sigma the visibility vector rendered at the decoded pose: it is never
positive, and more negative means the candidate shows more of the
under-observed Gaussians.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .camera import CameraPose
from .errors import ArgumentError, StateError
from .gaussians import GaussianCloud
from .raster import visibility_map
from .rig import BodyPose, PoseDecoder, PoseLatent, Skeleton

DEFAULT_MIX_WEIGHT = 0.01


@dataclass
class Frame:
    """One observed triad: image, body pose, camera pose."""

    image: np.ndarray  # (H, W, 3) in [0, 1]
    body_pose: BodyPose
    camera_pose: CameraPose

    def __post_init__(self):
        img = np.asarray(self.image, dtype=np.float64)
        if img.shape != (self.camera_pose.height, self.camera_pose.width, 3):
            raise ArgumentError(
                f"frame image shape {img.shape} does not match camera "
                f"{self.camera_pose.height}x{self.camera_pose.width}"
            )
        self.image = img


@dataclass
class EditedFrame:
    """A user-edited render: image, binary mask of edited pixels, the poses
    it was rendered with, and the replayable edit log."""

    image: np.ndarray  # (H, W, 3) in [0, 1]
    mask: np.ndarray  # (H, W) bool
    body_pose: BodyPose
    camera_pose: CameraPose
    edit_log: list[dict] = field(default_factory=list)

    def __post_init__(self):
        img = np.asarray(self.image, dtype=np.float64)
        mask = np.asarray(self.mask).astype(bool)
        if img.shape[:2] != mask.shape or img.shape != (
            self.camera_pose.height,
            self.camera_pose.width,
            3,
        ):
            raise ArgumentError(
                f"edited frame shapes disagree: image {img.shape}, mask {mask.shape}, "
                f"camera {self.camera_pose.height}x{self.camera_pose.width}"
            )
        self.image = img
        self.mask = mask

    def background_submask(self) -> np.ndarray:
        """Union of mask regions painted with the background tool."""
        out = np.zeros_like(self.mask)
        for entry in self.edit_log:
            if entry.get("tool") == "background" and "mask" in entry:
                out |= np.asarray(entry["mask"]).astype(bool)
        return out & self.mask


@dataclass
class VisibilityLedger:
    """Accumulated visibility V (length N), its mix weight, source counts."""

    values: np.ndarray
    mix_weight: float
    frame_count: int
    edit_count: int

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64).reshape(-1)
        if not np.all(np.isfinite(v)) or np.any(v < 0):
            raise StateError("ledger visibility must be finite and nonnegative")
        self.values = v

    def __len__(self) -> int:
        return len(self.values)


def accumulate(
    cloud: GaussianCloud,
    skeleton: Skeleton,
    frames: list[Frame],
    edits: list[EditedFrame],
    mix_weight: float = DEFAULT_MIX_WEIGHT,
) -> VisibilityLedger:
    """Average per-Gaussian visibility over frames and edits.

    V = (1 - w) * mean over frames + w * mean over edits; with no edits the
    second term is dropped entirely (not divided by zero).
    """
    if not frames:
        raise ArgumentError("ledger accumulation needs at least one frame")
    frame_sum = np.zeros(len(cloud), dtype=np.float64)
    for fr in frames:
        frame_sum += visibility_map(
            cloud, fr.camera_pose, skeleton=skeleton, body_pose=fr.body_pose
        )
    values = (1.0 - mix_weight) * (frame_sum / len(frames))
    if edits:
        edit_sum = np.zeros(len(cloud), dtype=np.float64)
        for ed in edits:
            edit_sum += visibility_map(
                cloud, ed.camera_pose, skeleton=skeleton, body_pose=ed.body_pose
            )
        values = values + mix_weight * (edit_sum / len(edits))
    return VisibilityLedger(
        values=values,
        mix_weight=mix_weight,
        frame_count=len(frames),
        edit_count=len(edits),
    )


def mean_visibility(ledger: VisibilityLedger) -> float:
    """Arithmetic mean of V over all Gaussians."""
    return float(ledger.values.mean())


def clip(x: float) -> float:
    """x when negative, else 0."""
    return x if x < 0 else 0.0


def deficit(ledger: VisibilityLedger) -> np.ndarray:
    """clip(V - Vbar) per Gaussian: negative for under-observed entries."""
    return np.minimum(ledger.values - mean_visibility(ledger), 0.0)


def objective(
    cloud: GaussianCloud,
    skeleton: Skeleton,
    decoder: PoseDecoder,
    ledger: VisibilityLedger,
    latent: PoseLatent,
    cam: CameraPose,
) -> float:
    """sum_i clip(V_i - Vbar) * sigma_i at the decoded pose; always <= 0."""
    if len(ledger) != len(cloud):
        raise StateError(
            f"ledger built for {len(ledger)} Gaussians, cloud has {len(cloud)}"
        )
    pose = decoder.decode(latent)
    sigma = visibility_map(cloud, cam, skeleton=skeleton, body_pose=pose)
    return float(np.dot(deficit(ledger), sigma))


def objective_for_pose(
    cloud: GaussianCloud,
    skeleton: Skeleton,
    ledger: VisibilityLedger,
    body_pose: BodyPose,
    cam: CameraPose,
) -> float:
    """Objective evaluated at an already-decoded body pose."""
    if len(ledger) != len(cloud):
        raise StateError(
            f"ledger built for {len(ledger)} Gaussians, cloud has {len(cloud)}"
        )
    sigma = visibility_map(cloud, cam, skeleton=skeleton, body_pose=body_pose)
    return float(np.dot(deficit(ledger), sigma))
