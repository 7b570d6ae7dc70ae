"""Evaluation metrics: IoU, PSNR, silhouettes, and the report shape."""

import json

import numpy as np
import pytest
from skimage.metrics import peak_signal_noise_ratio

from splatshop import harness
from splatshop.errors import ArgumentError
from splatshop.metrics import (
    PSNR_CAP,
    SILHOUETTE_THRESHOLD,
    EvalFrame,
    evaluate,
    iou,
    psnr,
    silhouette_mask,
)


def test_silhouette_threshold_default():
    assert SILHOUETTE_THRESHOLD == 0.5


def test_iou_basics():
    a = np.zeros((6, 6), dtype=bool)
    b = np.zeros((6, 6), dtype=bool)
    assert iou(a, b) == 1.0  # both empty
    a[0:3, :] = True
    assert iou(a, a) == 1.0
    b[0:3, 0:3] = True
    assert iou(a, b) == pytest.approx(0.5)
    b[:] = ~a
    assert iou(a, b) == 0.0
    with pytest.raises(ArgumentError, match="differ"):
        iou(np.zeros((2, 2), dtype=bool), np.zeros((3, 3), dtype=bool))


def test_psnr_matches_library():
    rng = np.random.default_rng(0)
    a = rng.uniform(0.0, 1.0, (16, 16, 3))
    b = rng.uniform(0.0, 1.0, (16, 16, 3))
    assert psnr(a, b) == pytest.approx(
        peak_signal_noise_ratio(a, b, data_range=1.0), abs=1e-10
    )
    assert psnr(a, a) == PSNR_CAP
    # nearly identical images collapse to the cap instead of +inf
    assert psnr(a, a + 1e-9) == PSNR_CAP


def test_silhouette_mask_covers_body(small_scene):
    fr = small_scene.frames[0]
    mask = silhouette_mask(
        small_scene.cloud,
        fr.camera_pose,
        skeleton=small_scene.skeleton,
        body_pose=fr.body_pose,
    )
    assert mask.shape == fr.image.shape[:2]
    frac = mask.mean()
    assert 0.05 < frac < 0.9  # the avatar occupies part of the view
    # higher threshold can only shrink the silhouette
    tight = silhouette_mask(
        small_scene.cloud,
        fr.camera_pose,
        skeleton=small_scene.skeleton,
        body_pose=fr.body_pose,
        threshold=0.9,
    )
    assert not np.any(tight & ~mask)


def test_eval_frame_validation(small_scene):
    fr = small_scene.frames[0]
    with pytest.raises(ArgumentError, match="disagree"):
        EvalFrame(
            image=fr.image,
            mask=np.zeros((3, 3), dtype=bool),
            body_pose=fr.body_pose,
            camera_pose=fr.camera_pose,
        )


def test_evaluate_self_is_perfect(small_scene):
    """Scoring a cloud against its own renders maxes every metric."""
    frames = harness.make_eval_frames(
        small_scene.cloud, small_scene.skeleton, n_frames=2, resolution=64
    )
    report = evaluate(small_scene.cloud, small_scene.skeleton, frames)
    assert report["mean_iou"] == 1.0
    assert report["mean_psnr"] == PSNR_CAP
    assert report["mean_ssim"] == pytest.approx(1.0, abs=1e-9)
    assert len(report["frames"]) == 2
    assert json.loads(json.dumps(report)) == report


def test_evaluate_detects_corruption(small_scene):
    frames = harness.make_eval_frames(
        small_scene.cloud, small_scene.skeleton, n_frames=2, resolution=64
    )
    spec = harness.ArtifactSpec(floater_count=6, recolor_patch_count=2, seed=1)
    corrupted, _ = harness.inject_artifacts(
        small_scene.cloud, small_scene.skeleton, spec
    )
    clean = evaluate(small_scene.cloud, small_scene.skeleton, frames)
    broken = evaluate(corrupted, small_scene.skeleton, frames)
    assert broken["mean_iou"] < clean["mean_iou"]
    assert broken["mean_psnr"] < clean["mean_psnr"]
    assert broken["mean_ssim"] < clean["mean_ssim"]


def test_evaluate_requires_frames(small_scene):
    with pytest.raises(ArgumentError, match="frame"):
        evaluate(small_scene.cloud, small_scene.skeleton, [])
