"""Masked fine-tuning of a Gaussian cloud against video frames and user
edits, plus background-region deletion, pruning, and flag-gated
densification.

Gradients flow analytically through the compositing chain for colors and
opacities and through the 2D projection (and skinning blend) for means;
scales and rotations stay frozen during edit-driven refinement. Updates
use Adam with per-parameter-group learning rates; parameters live in
float32 on the cloud and are upcast for every computation, so a fixed
seed reproduces the final cloud bit for bit.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from . import raster, rig
from .errors import ArgumentError, ConfigError, StateError
from .gaussians import GaussianCloud
from .ssim import ssim as ssim_value, ssim_and_grad
from .visibility import EditedFrame, Frame

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    steps_per_update: int = 500
    p_edit: float = 0.3  # probability of drawing the sample from the edit set
    lambda_ssim: float = 0.2
    lr_mean: float = 1.6e-4
    lr_color: float = 2.5e-3
    lr_opacity: float = 5e-2
    prune_opacity_eps: float = 0.005
    prune_interval: int = 100
    max_world_scale: float = 1.0  # m
    delete_vis_threshold: float = 0.05
    seed: int = 0
    densify_enabled: bool = False
    densify_grad_threshold: float = 2e-4
    densify_scale_threshold: float = 0.05  # m, split above / clone below

    def __post_init__(self):
        if not 0.0 <= self.p_edit <= 1.0:
            raise ConfigError(f"p_edit must be in [0, 1], got {self.p_edit}")
        for name in ("lr_mean", "lr_color", "lr_opacity"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive")
        if self.steps_per_update < 1 or self.prune_interval < 1:
            raise ConfigError("step counts must be positive")

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {k: v for k, v in d.items() if k in cls.__dataclass_fields__}
        return cls(**known)


class Adam:
    """First-order optimizer state for the three trainable groups."""

    BETA1, BETA2, EPS = 0.9, 0.999, 1e-8

    def __init__(self, n: int):
        self.t = 0
        self.moments = {
            "means": (np.zeros((n, 3)), np.zeros((n, 3))),
            "colors": (np.zeros((n, 3)), np.zeros((n, 3))),
            "opacity_logits": (np.zeros(n), np.zeros(n)),
        }

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray],
             rates: dict[str, float]) -> dict[str, np.ndarray]:
        self.t += 1
        out = {}
        for name, value in params.items():
            m, v = self.moments[name]
            g = grads[name]
            m[...] = self.BETA1 * m + (1.0 - self.BETA1) * g
            v[...] = self.BETA2 * v + (1.0 - self.BETA2) * g * g
            m_hat = m / (1.0 - self.BETA1**self.t)
            v_hat = v / (1.0 - self.BETA2**self.t)
            out[name] = value - rates[name] * m_hat / (np.sqrt(v_hat) + self.EPS)
        return out

    def select(self, keep: np.ndarray) -> None:
        """Drop state rows for pruned Gaussians (keep: bool mask or indices)."""
        self.moments = {
            name: (m[keep], v[keep]) for name, (m, v) in self.moments.items()
        }

    def extend(self, count: int) -> None:
        """Zero-state rows for newly densified Gaussians."""
        def pad(arr):
            extra = np.zeros((count,) + arr.shape[1:], dtype=arr.dtype)
            return np.concatenate([arr, extra], axis=0)

        self.moments = {name: (pad(m), pad(v)) for name, (m, v) in self.moments.items()}


def _pixels(image) -> np.ndarray:
    if isinstance(image, raster.RenderedImage):
        return image.pixels
    return np.asarray(image, dtype=np.float64)


def image_loss(rendered, target, lambda_ssim: float = 0.2) -> float:
    """mean L1 + lambda * (1 - SSIM)."""
    loss, _ = _image_loss_impl(_pixels(rendered), _pixels(target), lambda_ssim, False)
    return loss


def image_loss_and_grad(rendered, target, lambda_ssim: float = 0.2):
    """Loss plus its gradient with respect to the rendered pixels."""
    return _image_loss_impl(_pixels(rendered), _pixels(target), lambda_ssim, True)


def _image_loss_impl(r: np.ndarray, t: np.ndarray, lambda_ssim: float, want_grad: bool):
    if r.shape != t.shape:
        raise ArgumentError(f"image shapes differ: {r.shape} vs {t.shape}")
    diff = r - t
    loss = float(np.abs(diff).mean())
    grad = np.sign(diff) / diff.size if want_grad else None
    if lambda_ssim != 0.0:
        if want_grad:
            s, s_grad = ssim_and_grad(r, t)
            grad = grad - lambda_ssim * s_grad
        else:
            s = ssim_value(r, t)
        loss += lambda_ssim * (1.0 - s)
    return loss, grad


def masked_loss(mask: np.ndarray, rendered, target, lambda_ssim: float = 0.2) -> float:
    """image_loss of the masked pair; an empty mask contributes 0."""
    loss, _ = _masked_loss_impl(mask, _pixels(rendered), _pixels(target), lambda_ssim, False)
    return loss


def masked_loss_and_grad(mask: np.ndarray, rendered, target, lambda_ssim: float = 0.2):
    return _masked_loss_impl(mask, _pixels(rendered), _pixels(target), lambda_ssim, True)


def _masked_loss_impl(mask, r, t, lambda_ssim, want_grad):
    mask = np.asarray(mask).astype(bool)
    if mask.shape != r.shape[:2]:
        raise ArgumentError(f"mask shape {mask.shape} does not match image {r.shape}")
    if not mask.any():
        log.warning("masked loss over an empty mask; contributing 0")
        return 0.0, (np.zeros_like(r) if want_grad else None)
    m = mask[..., None].astype(np.float64)
    loss, grad = _image_loss_impl(r * m, t * m, lambda_ssim, want_grad)
    if want_grad:
        grad = grad * m  # pixels outside the mask never influence parameters
    return loss, grad


@dataclass
class StepReport:
    loss: float
    skipped: bool = False  # non-finite gradient encountered


def sample_geometry(
    cloud: GaussianCloud, skeleton: rig.Skeleton, sample: Frame | EditedFrame
) -> tuple[np.ndarray, np.ndarray]:
    """Blend matrices and world covariances for one sample's pose.

    Valid across finetune steps (only means, colors, and opacities train)
    until pruning or densification changes the cloud's rows."""
    blends, rots_w = rig.skinning_products(cloud, skeleton, sample.body_pose)
    s2 = np.exp(2.0 * cloud.log_scales.astype(np.float64))
    return blends, np.einsum("nij,nj,nkj->nik", rots_w, s2, rots_w)


def finetune_step(
    cloud: GaussianCloud,
    skeleton: rig.Skeleton,
    sample: Frame | EditedFrame,
    cfg: TrainConfig,
    opt: Adam,
    geometry: tuple[np.ndarray, np.ndarray] | None = None,
) -> StepReport:
    """One render / backward / update cycle in place on the cloud."""
    blends, covs_w = geometry if geometry is not None else sample_geometry(
        cloud, skeleton, sample
    )
    means_w = np.einsum(
        "nij,nj->ni", blends[:, :3, :3], cloud.means.astype(np.float64)
    ) + blends[:, :3, 3]
    image, _, state = raster.render_arrays(
        means_w,
        covs_w,
        cloud.opacities(),
        cloud.colors.astype(np.float64),
        sample.camera_pose,
        with_state=True,
    )
    if isinstance(sample, EditedFrame):
        loss, grad_pixels = masked_loss_and_grad(
            sample.mask, image, sample.image, cfg.lambda_ssim
        )
    else:
        loss, grad_pixels = image_loss_and_grad(image, sample.image, cfg.lambda_ssim)

    grads = raster.backward(state, grad_pixels)
    eta = cloud.opacities()
    grad_logit = grads["opacities"] * eta * (1.0 - eta)
    # means: world -> canonical through each Gaussian's blend matrix
    grad_mean = np.einsum("nji,nj->ni", blends[:, :3, :3], grads["means_world"])

    finite = (
        np.all(np.isfinite(grad_mean))
        and np.all(np.isfinite(grads["colors"]))
        and np.all(np.isfinite(grad_logit))
    )
    if not finite:
        log.warning("non-finite gradient; skipping update step")
        return StepReport(loss=loss, skipped=True)

    params = {
        "means": cloud.means.astype(np.float64),
        "colors": cloud.colors.astype(np.float64),
        "opacity_logits": cloud.opacity_logits.astype(np.float64),
    }
    updated = opt.step(
        params,
        {"means": grad_mean, "colors": grads["colors"], "opacity_logits": grad_logit},
        {"means": cfg.lr_mean, "colors": cfg.lr_color, "opacity_logits": cfg.lr_opacity},
    )
    cloud.means[...] = updated["means"].astype(np.float32)
    cloud.colors[...] = np.clip(updated["colors"], 0.0, 1.0).astype(np.float32)
    cloud.opacity_logits[...] = updated["opacity_logits"].astype(np.float32)
    return StepReport(loss=loss)


def draw_sample(rng: np.random.Generator, p_edit: float, n_frames: int, n_edits: int):
    """Pick (use_edit, index) for one training step.

    The uniform draw happens unconditionally so traces with p_edit = 0 and
    with an empty edit set are identical under the same seed; an edit draw
    with no edits available falls back to the frame set.
    """
    use_edit = bool(rng.random() < p_edit) and n_edits > 0
    idx = int(rng.integers(n_edits if use_edit else n_frames))
    return use_edit, idx


def prune_mask(cloud: GaussianCloud, cfg: TrainConfig) -> np.ndarray:
    """Keep mask: drops near-transparent or oversized Gaussians."""
    eta = cloud.opacities()
    max_scale = np.exp(cloud.log_scales.astype(np.float64)).max(axis=1)
    return (eta >= cfg.prune_opacity_eps) & (max_scale <= cfg.max_world_scale)


def prune(cloud: GaussianCloud, cfg: TrainConfig) -> GaussianCloud:
    """Remove prunable Gaussians; refuses to empty the cloud."""
    keep = prune_mask(cloud, cfg)
    if not keep.any():
        raise StateError("pruning would remove every Gaussian; cloud left unchanged")
    if keep.all():
        return cloud
    return cloud.select(keep)


def densify(
    cloud: GaussianCloud, grad_norms: np.ndarray, cfg: TrainConfig
) -> tuple[GaussianCloud, np.ndarray]:
    """Clone small / split large high-gradient Gaussians.

    Returns (cloud', parent index per output Gaussian). Splitting divides
    scales by 1.6 and offsets the two children along the major axis so the
    pair's second moment stays close to the parent's. No-op unless
    cfg.densify_enabled.
    """
    parents = np.arange(len(cloud))
    if not cfg.densify_enabled:
        return cloud, parents
    grad_norms = np.asarray(grad_norms, dtype=np.float64).reshape(-1)
    hot = grad_norms > cfg.densify_grad_threshold
    scales = np.exp(cloud.log_scales.astype(np.float64))
    big = scales.max(axis=1) > cfg.densify_scale_threshold
    split = hot & big
    clone = hot & ~big
    if not hot.any():
        return cloud, parents

    pieces = [cloud]
    parent_ids = [parents]
    if clone.any():
        pieces.append(cloud.select(clone))
        parent_ids.append(np.flatnonzero(clone))
    if split.any():
        idx = np.flatnonzero(split)
        from .gaussians import quat_to_matrix

        rot = quat_to_matrix(cloud.rotations[idx].astype(np.float64))
        s = scales[idx]
        major = np.argmax(s, axis=1)
        axis = rot[np.arange(len(idx)), :, major]
        # offset so that offset^2 + (s/1.6)^2 = s^2 along the major axis
        a = np.sqrt(1.0 - 1.0 / 1.6**2)
        offset = (a * s[np.arange(len(idx)), major])[:, None] * axis
        for sign in (+1.0, -1.0):
            child = cloud.select(idx)
            child.means[...] = (
                child.means.astype(np.float64) + sign * offset
            ).astype(np.float32)
            child.log_scales[...] = (
                child.log_scales.astype(np.float64) - np.log(1.6)
            ).astype(np.float32)
            pieces.append(child)
            parent_ids.append(idx)
        # the split parents are replaced by their children
        keep = ~split
        pieces[0] = cloud.select(keep)
        parent_ids[0] = np.flatnonzero(keep)

    merged = GaussianCloud(
        means=np.concatenate([p.means for p in pieces]),
        rotations=np.concatenate([p.rotations for p in pieces]),
        log_scales=np.concatenate([p.log_scales for p in pieces]),
        opacity_logits=np.concatenate([p.opacity_logits for p in pieces]),
        colors=np.concatenate([p.colors for p in pieces]),
        skin_joints=np.concatenate([p.skin_joints for p in pieces]),
        skin_weights=np.concatenate([p.skin_weights for p in pieces]),
        skeleton_ref=cloud.skeleton_ref,
    )
    return merged, np.concatenate(parent_ids)


@dataclass
class FinetuneResult:
    cloud: GaussianCloud
    trace: list[tuple[int, str, float]]  # (step, source, loss)
    kept_indices: np.ndarray  # original index of each surviving Gaussian
    skipped_steps: int = 0


def run_finetune(
    cloud: GaussianCloud,
    skeleton: rig.Skeleton,
    frames: list[Frame],
    edits: list[EditedFrame],
    cfg: TrainConfig,
) -> FinetuneResult:
    """steps_per_update sampled fine-tune steps with periodic pruning."""
    if not frames:
        raise ArgumentError("fine-tuning needs at least one video frame")
    rng = np.random.default_rng(cfg.seed)
    cloud = cloud.copy()
    opt = Adam(len(cloud))
    kept = np.arange(len(cloud))
    trace: list[tuple[int, str, float]] = []
    skipped = 0
    grad_accum = np.zeros(len(cloud))
    geometry: dict[tuple[str, int], tuple[np.ndarray, np.ndarray]] = {}

    for step in range(1, cfg.steps_per_update + 1):
        use_edit, idx = draw_sample(rng, cfg.p_edit, len(frames), len(edits))
        sample = edits[idx] if use_edit else frames[idx]
        key = ("edit" if use_edit else "frame", idx)
        if key not in geometry:
            geometry[key] = sample_geometry(cloud, skeleton, sample)
        report = finetune_step(cloud, skeleton, sample, cfg, opt, geometry[key])
        if report.skipped:
            skipped += 1
        trace.append((step, "edit" if use_edit else "frame", report.loss))
        m, _ = opt.moments["means"]
        grad_accum += np.linalg.norm(m, axis=1)

        if step % cfg.prune_interval == 0:
            keep = prune_mask(cloud, cfg)
            if not keep.any():
                log.warning("pruning would empty the cloud at step %d; skipped", step)
            elif not keep.all():
                cloud = cloud.select(keep)
                opt.select(keep)
                kept = kept[keep]
                grad_accum = grad_accum[keep]
                geometry.clear()  # cached rows no longer line up
            if cfg.densify_enabled:
                cloud, parents = densify(cloud, grad_accum / step, cfg)
                opt.select(parents)  # gathers rows; children inherit parent state
                kept = kept[parents]
                grad_accum = grad_accum[parents]
                geometry.clear()
    return FinetuneResult(cloud=cloud, trace=trace, kept_indices=kept, skipped_steps=skipped)


def delete_background_gaussians(
    cloud: GaussianCloud,
    skeleton: rig.Skeleton,
    edit: EditedFrame,
    vis_threshold: float = 0.05,
) -> tuple[GaussianCloud, np.ndarray]:
    """Remove Gaussians whose centers land in the edit's background-painted
    region and are actually visible there (occluded ones survive)."""
    submask = edit.background_submask()
    if not submask.any():
        return cloud, np.empty(0, dtype=np.int64)

    means_w, _, _ = rig.deform_arrays(cloud, skeleton, edit.body_pose)
    cam = edit.camera_pose
    cam_pts = means_w @ cam.rotation.T + cam.translation
    in_front = cam_pts[:, 2] > raster.NEAR_PLANE
    uv = cam.project(np.where(in_front[:, None], cam_pts, [0.0, 0.0, 1.0]))
    ix = np.floor(uv[:, 0]).astype(np.int64)
    iy = np.floor(uv[:, 1]).astype(np.int64)
    onscreen = in_front & (ix >= 0) & (ix < cam.width) & (iy >= 0) & (iy < cam.height)
    painted = np.zeros(len(cloud), dtype=bool)
    painted[onscreen] = submask[iy[onscreen], ix[onscreen]]

    vis = raster.visibility_map(
        cloud, cam, skeleton=skeleton, body_pose=edit.body_pose
    )
    doomed = painted & (vis >= vis_threshold)
    if doomed.all():
        raise StateError("background deletion would remove every Gaussian")
    return cloud.select(~doomed), np.flatnonzero(doomed)
