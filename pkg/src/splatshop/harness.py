"""Synthetic-avatar construction, artifact injection, and the headless
oracle-edit refinement loop used for end-to-end evaluation.

The avatar is ~2k Gaussians sampled on capsules along the default
16-joint skeleton, skinned by nearest-two-bones distance softmax. A
corrupted twin gets floaters pushed outward from random surface Gaussians
plus locally recolored patches, with a manifest recording exactly which
indices were touched. The oracle loop then simulates an ideal editor:
render the ground truth at each suggested pose, diff against the current
avatar's render, and feed the diff mask back as an edit (background tool
where the truth is background, color fill elsewhere).
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.ndimage import binary_dilation

from . import raster
from .camera import CameraPose, look_at
from .errors import ArgumentError
from .gaussians import GaussianCloud, pack_skinning
from .metrics import EvalFrame
from .rig import BodyPose, PoseDecoder, Skeleton, canonical_pose, default_skeleton
from .suggest import SuggestConfig, Suggestion, suggest_pose
from .training import TrainConfig, delete_background_gaussians, run_finetune
from .visibility import EditedFrame, Frame, accumulate

EDIT_DIFF_THRESHOLD = 8.0 / 255.0
EDIT_DILATE_PX = 2
BACKGROUND_WHITE_MIN = 254.0 / 255.0

SHIRT = (0.22, 0.38, 0.62)
SKIN = (0.78, 0.60, 0.47)
PANTS = (0.28, 0.28, 0.33)


@dataclass(frozen=True)
class AvatarParams:
    count: int = 2000
    scale: float = 0.022  # base Gaussian radius, m
    opacity: float = 0.85
    weight_softness: float = 0.04  # m, skinning softmax temperature


@dataclass(frozen=True)
class Capsule:
    start: np.ndarray
    end: np.ndarray
    radius: float
    color: tuple[float, float, float]
    joint: int  # joint whose motion carries this segment


def body_capsules(skel: Skeleton) -> list[Capsule]:
    """Limb/torso/head capsules in rest pose, tied to their driving joints."""
    pos = skel.rest_world[:, :3, 3]

    def cap(a: int, b: int, radius: float, color, joint: int | None = None) -> Capsule:
        return Capsule(pos[a].copy(), pos[b].copy(), radius, color, a if joint is None else joint)

    head_top = pos[3] + np.array([0.0, 0.17, 0.0])
    return [
        cap(0, 1, 0.105, SHIRT),
        cap(1, 2, 0.105, SHIRT),
        Capsule(pos[2].copy(), pos[3].copy(), 0.055, SKIN, 2),  # neck region
        Capsule(pos[3].copy(), head_top, 0.095, SKIN, 3),
        cap(2, 4, 0.06, SHIRT),
        cap(2, 7, 0.06, SHIRT),
        cap(4, 5, 0.045, SKIN),
        cap(5, 6, 0.04, SKIN),
        cap(7, 8, 0.045, SKIN),
        cap(8, 9, 0.04, SKIN),
        cap(10, 11, 0.068, PANTS),
        cap(11, 12, 0.052, PANTS),
        cap(13, 14, 0.068, PANTS),
        cap(14, 15, 0.052, PANTS),
    ]


def _segment_distance(points: np.ndarray, start: np.ndarray, end: np.ndarray) -> np.ndarray:
    axis = end - start
    denom = float(axis @ axis)
    if denom < 1e-12:
        return np.linalg.norm(points - start, axis=1)
    t = np.clip((points - start) @ axis / denom, 0.0, 1.0)
    closest = start + t[:, None] * axis
    return np.linalg.norm(points - closest, axis=1)


def skin_points(
    points: np.ndarray, capsules: list[Capsule], softness: float
) -> list[dict[int, float]]:
    """Nearest-two-bones distance-softmax weights per point."""
    dists = np.stack(
        [_segment_distance(points, c.start, c.end) for c in capsules], axis=1
    )
    order = np.argsort(dists, axis=1)[:, :2]
    maps = []
    for i in range(len(points)):
        j0, j1 = capsules[order[i, 0]].joint, capsules[order[i, 1]].joint
        d0, d1 = dists[i, order[i, 0]], dists[i, order[i, 1]]
        w0 = math.exp(-d0 / softness)
        w1 = math.exp(-d1 / softness)
        if j0 == j1:
            maps.append({j0: 1.0})
        else:
            total = w0 + w1
            maps.append({j0: w0 / total, j1: w1 / total})
    return maps


def _sample_capsule(rng: np.random.Generator, cap: Capsule, count: int) -> np.ndarray:
    """Points on the capsule's lateral surface (uniform along axis/angle)."""
    axis = cap.end - cap.start
    length = np.linalg.norm(axis)
    axis = axis / length if length > 1e-12 else np.array([0.0, 1.0, 0.0])
    helper = np.array([1.0, 0.0, 0.0])
    if abs(axis @ helper) > 0.9:
        helper = np.array([0.0, 0.0, 1.0])
    n1 = np.cross(axis, helper)
    n1 /= np.linalg.norm(n1)
    n2 = np.cross(axis, n1)
    t = rng.uniform(-0.08, 1.08, size=count)  # small overshoot rounds the ends
    phi = rng.uniform(0.0, 2.0 * math.pi, size=count)
    centers = cap.start + np.clip(t, 0.0, 1.0)[:, None] * (cap.end - cap.start)
    return centers + cap.radius * (
        np.cos(phi)[:, None] * n1 + np.sin(phi)[:, None] * n2
    )


def make_synthetic_avatar(
    params: AvatarParams | None = None, seed: int = 0
) -> tuple[GaussianCloud, Skeleton]:
    """Procedural capsule avatar on the default skeleton, deterministic per seed."""
    params = params or AvatarParams()
    skel = default_skeleton()
    caps = body_capsules(skel)
    rng = np.random.default_rng(seed)

    areas = np.array(
        [
            2.0 * math.pi * c.radius * (np.linalg.norm(c.end - c.start) + c.radius)
            for c in caps
        ]
    )
    counts = np.maximum(1, np.round(params.count * areas / areas.sum())).astype(int)

    pts, colors = [], []
    for cap, cnt in zip(caps, counts):
        pts.append(_sample_capsule(rng, cap, cnt))
        base = np.asarray(cap.color)
        colors.append(
            np.clip(base + rng.normal(0.0, 0.03, size=(cnt, 3)), 0.05, 0.92)
        )
    points = np.concatenate(pts)
    colors = np.concatenate(colors)
    n = len(points)

    joints, weights = pack_skinning(skin_points(points, caps, params.weight_softness))
    logit = math.log(params.opacity / (1.0 - params.opacity))
    cloud = GaussianCloud(
        means=points,
        rotations=np.tile([1.0, 0.0, 0.0, 0.0], (n, 1)),
        log_scales=math.log(params.scale) + rng.normal(0.0, 0.15, size=(n, 3)),
        opacity_logits=logit + rng.normal(0.0, 0.2, size=n),
        colors=colors,
        skin_joints=joints,
        skin_weights=weights,
    )
    return cloud, skel


def add_hidden_cluster(
    cloud: GaussianCloud, skel: Skeleton, count: int = 30, seed: int = 1
) -> tuple[GaussianCloud, np.ndarray]:
    """Append a low-visibility cluster on the back of the torso.

    The cluster sits just off the torso surface facing -z, so a frontal
    camera arc never sees it but a rear camera hits it first.
    """
    rng = np.random.default_rng(seed)
    caps = body_capsules(skel)
    torso_r = 0.105
    phi = math.pi + rng.uniform(-0.35, 0.35, size=count)
    y = rng.uniform(1.03, 1.27, size=count)
    points = np.stack(
        [
            (torso_r + 0.006) * np.sin(phi),
            y,
            (torso_r + 0.006) * np.cos(phi),
        ],
        axis=1,
    )
    joints, weights = pack_skinning(skin_points(points, caps, 0.04))
    extra = GaussianCloud(
        means=points,
        rotations=np.tile([1.0, 0.0, 0.0, 0.0], (count, 1)),
        log_scales=np.full((count, 3), math.log(0.016)) + rng.normal(0.0, 0.1, (count, 3)),
        opacity_logits=np.full(count, math.log(0.8 / 0.2)),
        colors=np.clip(
            np.array([0.10, 0.75, 0.20]) + rng.normal(0.0, 0.02, (count, 3)), 0.0, 0.92
        ),
        skin_joints=joints,
        skin_weights=weights,
    )
    merged = _concat_clouds(cloud, extra)
    return merged, np.arange(len(cloud), len(merged))


def _concat_clouds(a: GaussianCloud, b: GaussianCloud) -> GaussianCloud:
    return GaussianCloud(
        means=np.concatenate([a.means, b.means]),
        rotations=np.concatenate([a.rotations, b.rotations]),
        log_scales=np.concatenate([a.log_scales, b.log_scales]),
        opacity_logits=np.concatenate([a.opacity_logits, b.opacity_logits]),
        colors=np.concatenate([a.colors, b.colors]),
        skin_joints=np.concatenate([a.skin_joints, b.skin_joints]),
        skin_weights=np.concatenate([a.skin_weights, b.skin_weights]),
        skeleton_ref=a.skeleton_ref,
    )


@dataclass(frozen=True)
class ArtifactSpec:
    floater_count: int = 10
    floater_offset_range: tuple[float, float] = (0.15, 0.35)
    recolor_patch_count: int = 3
    recolor_shift: tuple[float, float, float] = (-0.35, 0.30, -0.25)
    recolor_patch_radius: float = 0.06  # m
    seed: int = 0

    def __post_init__(self):
        if self.floater_count < 0 or self.recolor_patch_count < 0:
            raise ArgumentError("artifact counts must be nonnegative")


def inject_artifacts(
    cloud: GaussianCloud, skel: Skeleton, spec: ArtifactSpec
) -> tuple[GaussianCloud, dict]:
    """Corrupt a copy of the cloud; the manifest names every touched index.

    Floaters are offset outward (away from the nearest bone axis) from
    random surface Gaussians and appended at the end; recolor patches
    shift the colors of all Gaussians within a small canonical-space ball.
    """
    rng = np.random.default_rng(spec.seed)
    caps = body_capsules(skel)
    out = cloud.copy()
    n = len(cloud)
    manifest: dict = {"spec": asdict(spec), "floaters": [], "recolored": [], "original_colors": []}

    if spec.recolor_patch_count > 0:
        centers = rng.choice(n, size=spec.recolor_patch_count, replace=False)
        shift = np.asarray(spec.recolor_shift, dtype=np.float64)
        touched = np.zeros(n, dtype=bool)
        means = cloud.means.astype(np.float64)
        for c in centers:
            touched |= (
                np.linalg.norm(means - means[c], axis=1) <= spec.recolor_patch_radius
            )
        idx = np.flatnonzero(touched)
        manifest["recolored"] = [int(i) for i in idx]
        manifest["original_colors"] = [
            [float(v) for v in row] for row in cloud.colors[idx]
        ]
        out.colors[idx] = np.clip(
            out.colors[idx].astype(np.float64) + shift, 0.0, 1.0
        ).astype(np.float32)

    if spec.floater_count > 0:
        src = rng.choice(n, size=spec.floater_count, replace=False)
        means = cloud.means.astype(np.float64)
        dists = np.stack(
            [_segment_distance(means[src], c.start, c.end) for c in caps], axis=1
        )
        nearest = np.argmin(dists, axis=1)
        dirs = np.empty((spec.floater_count, 3))
        for i, (s, c) in enumerate(zip(src, nearest)):
            cap = caps[c]
            axis = cap.end - cap.start
            denom = float(axis @ axis)
            t = 0.0 if denom < 1e-12 else float(
                np.clip((means[s] - cap.start) @ axis / denom, 0.0, 1.0)
            )
            radial = means[s] - (cap.start + t * axis)
            norm = np.linalg.norm(radial)
            dirs[i] = radial / norm if norm > 1e-9 else rng.normal(size=3)
            dirs[i] /= np.linalg.norm(dirs[i])
        offsets = rng.uniform(*spec.floater_offset_range, size=spec.floater_count)
        floater_means = means[src] + dirs * offsets[:, None]
        floaters = GaussianCloud(
            means=floater_means,
            rotations=np.tile([1.0, 0.0, 0.0, 0.0], (spec.floater_count, 1)),
            log_scales=np.full((spec.floater_count, 3), math.log(0.035))
            + rng.normal(0.0, 0.1, (spec.floater_count, 3)),
            opacity_logits=np.full(spec.floater_count, math.log(0.92 / 0.08)),
            colors=np.clip(
                np.array([0.50, 0.12, 0.10]) + rng.normal(0.0, 0.03, (spec.floater_count, 3)),
                0.0,
                1.0,
            ),
            skin_joints=cloud.skin_joints[src].copy(),
            skin_weights=cloud.skin_weights[src].copy(),
        )
        out = _concat_clouds(out, floaters)
        manifest["floaters"] = list(range(n, n + spec.floater_count))

    return out, manifest


# -- cameras and frame sets ---------------------------------------------------


def orbit_camera(
    azimuth: float,
    elevation: float,
    radius: float,
    target: np.ndarray,
    resolution: int = 128,
    focal: float = 100.0,
) -> CameraPose:
    """Camera on the look-at sphere; azimuth 0 faces the avatar's front (+z)."""
    ce = math.cos(elevation)
    target = np.asarray(target, dtype=np.float64)
    position = target + radius * np.array(
        [ce * math.sin(azimuth), math.sin(elevation), ce * math.cos(azimuth)]
    )
    return look_at(
        position,
        target,
        fx=focal * resolution / 128.0,
        fy=focal * resolution / 128.0,
        width=resolution,
        height=resolution,
    )


def make_turntable_frames(
    cloud: GaussianCloud,
    skel: Skeleton,
    n_frames: int = 8,
    azimuth_span: tuple[float, float] = (-0.9, 0.9),
    elevation: float = 0.12,
    radius: float = 2.4,
    resolution: int = 128,
) -> list[Frame]:
    """Frontal-arc views of the cloud at the canonical pose, white background."""
    center = cloud.means.astype(np.float64).mean(axis=0)
    pose = canonical_pose(skel)
    frames = []
    for az in np.linspace(*azimuth_span, n_frames):
        cam = orbit_camera(float(az), elevation, radius, center, resolution)
        image = raster.rasterize(cloud, cam, skeleton=skel, body_pose=pose)
        frames.append(Frame(image=image.pixels, body_pose=pose, camera_pose=cam))
    return frames


def make_eval_frames(
    cloud: GaussianCloud,
    skel: Skeleton,
    n_frames: int = 6,
    elevation: float = 0.12,
    radius: float = 2.4,
    resolution: int = 128,
    threshold: float = 0.5,
) -> list[EvalFrame]:
    """Full-circle ground-truth views: white-background render + actor mask."""
    center = cloud.means.astype(np.float64).mean(axis=0)
    pose = canonical_pose(skel)
    frames = []
    for az in np.linspace(0.0, 2.0 * math.pi, n_frames, endpoint=False):
        cam = orbit_camera(float(az), elevation, radius, center, resolution)
        image = raster.rasterize(cloud, cam, skeleton=skel, body_pose=pose)
        frames.append(
            EvalFrame(
                image=image.pixels,
                mask=image.accumulated_alpha >= threshold,
                body_pose=pose,
                camera_pose=cam,
            )
        )
    return frames


# -- oracle edits -------------------------------------------------------------


def oracle_edit(
    gt_cloud: GaussianCloud,
    current_cloud: GaussianCloud,
    skel: Skeleton,
    body_pose: BodyPose,
    cam: CameraPose,
) -> EditedFrame:
    """The ideal editor: paint the current render into the ground truth.

    The mask is the dilated per-pixel color difference; pixels where the
    truth is pure background become a background-tool stroke, the rest a
    color fill. The edited image is the ground-truth render itself.
    """
    current = raster.rasterize(current_cloud, cam, skeleton=skel, body_pose=body_pose)
    truth = raster.rasterize(gt_cloud, cam, skeleton=skel, body_pose=body_pose)
    diff = np.abs(current.pixels - truth.pixels).max(axis=2)
    mask = binary_dilation(diff > EDIT_DIFF_THRESHOLD, iterations=EDIT_DILATE_PX)
    background = mask & (truth.pixels >= BACKGROUND_WHITE_MIN).all(axis=2)
    log = []
    if background.any():
        log.append({"tool": "background", "mask": background})
    fill = mask & ~background
    if fill.any():
        log.append({"tool": "inpaint", "mask": fill})
    return EditedFrame(
        image=truth.pixels,
        mask=mask,
        body_pose=body_pose,
        camera_pose=cam,
        edit_log=log,
    )


# -- the end-to-end loop -------------------------------------------------------


def derive_seed(base: int, *salt: int) -> int:
    """Stable child seed from a base seed and a few integers."""
    return int(np.random.SeedSequence([base, *salt]).generate_state(1)[0])


@dataclass
class RefineIteration:
    suggestion: Suggestion
    deleted_original_ids: list[int]
    mean_masked_l1: float
    final_loss: float


@dataclass
class RefineOutcome:
    cloud: GaussianCloud
    edits: list[EditedFrame]
    surviving_ids: np.ndarray  # original corrupted-cloud index per survivor
    iterations: list[RefineIteration] = field(default_factory=list)
    loss_trace: list[tuple[int, str, float]] = field(default_factory=list)


def oracle_refine_loop(
    gt_cloud: GaussianCloud,
    corrupted: GaussianCloud,
    skel: Skeleton,
    frames: list[Frame],
    decoder: PoseDecoder,
    iterations: int = 5,
    train_cfg: TrainConfig | None = None,
    suggest_cfg: SuggestConfig | None = None,
    seed: int = 0,
) -> RefineOutcome:
    """suggest -> oracle edit -> delete -> fine-tune, `iterations` times."""
    train_cfg = train_cfg or TrainConfig()
    suggest_cfg = suggest_cfg or SuggestConfig()
    cloud = corrupted.copy()
    ids = np.arange(len(cloud))
    edits: list[EditedFrame] = []
    outcome = RefineOutcome(cloud=cloud, edits=edits, surviving_ids=ids)

    for k in range(iterations):
        ledger = accumulate(cloud, skel, frames, edits)
        s_cfg = SuggestConfig.from_dict(
            {**suggest_cfg.to_dict(), "seed": derive_seed(seed, 1, k)}
        )
        suggestion = suggest_pose(cloud, skel, decoder, ledger, s_cfg)
        body = decoder.decode(suggestion.latent)
        cam = suggestion.camera_params.to_camera_pose()
        edit = oracle_edit(gt_cloud, cloud, skel, body, cam)

        cloud, deleted = delete_background_gaussians(
            cloud, skel, edit, train_cfg.delete_vis_threshold
        )
        deleted_ids = [int(i) for i in ids[deleted]]
        keep = np.ones(len(ids), dtype=bool)
        keep[deleted] = False
        ids = ids[keep]

        edits.append(edit)
        t_cfg = TrainConfig.from_dict(
            {**train_cfg.to_dict(), "seed": derive_seed(seed, 2, k)}
        )
        result = run_finetune(cloud, skel, frames, edits, t_cfg)
        cloud = result.cloud
        ids = ids[result.kept_indices]
        outcome.loss_trace.extend(
            (step + k * t_cfg.steps_per_update, src, loss)
            for step, src, loss in result.trace
        )

        final_render = raster.rasterize(
            cloud, cam, skeleton=skel, body_pose=body
        )
        masked = edit.mask
        l1 = float(
            np.abs(final_render.pixels - edit.image)[masked].mean()
        ) if masked.any() else 0.0
        outcome.iterations.append(
            RefineIteration(
                suggestion=suggestion,
                deleted_original_ids=deleted_ids,
                mean_masked_l1=l1,
                final_loss=result.trace[-1][2] if result.trace else 0.0,
            )
        )

    outcome.cloud = cloud
    outcome.edits = edits
    outcome.surviving_ids = ids
    return outcome
