"""Pose suggestion search behavior on reduced budgets."""

import math

import numpy as np
import pytest

from splatshop.errors import ArgumentError, StateError
from splatshop.rig import PoseLatent
from splatshop.suggest import (
    CameraParams,
    SuggestConfig,
    Suggestion,
    sample_initial_camera,
    suggest_pose,
)
from splatshop.visibility import VisibilityLedger, accumulate, objective_for_pose

FAST = dict(restarts=2, local_steps=6, probe_resolution=48, probe_focal=37.5)


def test_config_defaults():
    cfg = SuggestConfig()
    assert cfg.restarts == 8
    assert cfg.local_steps == 40
    assert cfg.radius_bounds == (1.5, 4.0)
    assert cfg.elevation_bounds == (-math.pi / 3.0, math.pi / 3.0)
    assert cfg.probe_resolution == 128
    assert cfg.probe_focal == 100.0


def test_config_validation():
    with pytest.raises(ArgumentError):
        SuggestConfig(restarts=0)
    with pytest.raises(ArgumentError):
        SuggestConfig(step_decay=0.0)
    with pytest.raises(ArgumentError, match="radius"):
        SuggestConfig(radius_bounds=(3.0, 1.0))
    with pytest.raises(ArgumentError, match="elevation"):
        SuggestConfig(elevation_bounds=(-2.0, 2.0))


def test_config_dict_roundtrip():
    cfg = SuggestConfig(restarts=3, seed=11, radius_bounds=(2.0, 2.5))
    again = SuggestConfig.from_dict(cfg.to_dict())
    assert again == cfg
    # JSON-safe: bounds serialize as lists
    assert isinstance(cfg.to_dict()["radius_bounds"], list)


def test_camera_params_geometry():
    p = CameraParams(azimuth=0.0, elevation=0.0, radius=2.0, look_at=(0.0, 1.0, 0.0))
    np.testing.assert_allclose(p.position(), [0.0, 1.0, 2.0], atol=1e-12)
    cam = p.to_camera_pose()
    # the look-at target projects to the principal point
    uv = cam.project(cam.world_to_camera(np.array([[0.0, 1.0, 0.0]])))
    np.testing.assert_allclose(uv[0], [64.0, 64.0], atol=1e-9)

    side = CameraParams(
        azimuth=math.pi / 2, elevation=0.0, radius=3.0, look_at=(0.0, 0.0, 0.0)
    )
    np.testing.assert_allclose(side.position(), [3.0, 0.0, 0.0], atol=1e-12)


def test_sample_initial_camera_within_bounds():
    cfg = SuggestConfig(**FAST)
    rng = np.random.default_rng(0)
    for _ in range(50):
        p = sample_initial_camera(rng, cfg, np.array([0.0, 0.9, 0.0]))
        assert 0.0 <= p.azimuth < 2.0 * math.pi
        assert cfg.elevation_bounds[0] <= p.elevation <= cfg.elevation_bounds[1]
        assert cfg.radius_bounds[0] <= p.radius <= cfg.radius_bounds[1]
        assert p.width == cfg.probe_resolution


def test_suggest_deterministic(small_scene):
    cloud, skel = small_scene.cloud, small_scene.skeleton
    ledger = accumulate(cloud, skel, small_scene.frames, edits=[])
    cfg = SuggestConfig(seed=4, **FAST)
    a = suggest_pose(cloud, skel, small_scene.decoder, ledger, cfg)
    b = suggest_pose(cloud, skel, small_scene.decoder, ledger, cfg)
    np.testing.assert_array_equal(a.latent.z, b.latent.z)
    assert a.camera_params == b.camera_params
    assert a.objective_value == b.objective_value
    assert a.to_record() == b.to_record()


def test_suggest_seed_changes_search(small_scene):
    cloud, skel = small_scene.cloud, small_scene.skeleton
    ledger = accumulate(cloud, skel, small_scene.frames, edits=[])
    a = suggest_pose(cloud, skel, small_scene.decoder, ledger,
                     SuggestConfig(seed=1, **FAST))
    b = suggest_pose(cloud, skel, small_scene.decoder, ledger,
                     SuggestConfig(seed=2, **FAST))
    assert a.traces != b.traces


def test_traces_non_increasing(small_scene):
    """Accept-if-decreasing search: every restart trace is monotone."""
    cloud, skel = small_scene.cloud, small_scene.skeleton
    ledger = accumulate(cloud, skel, small_scene.frames, edits=[])
    cfg = SuggestConfig(seed=0, **FAST)
    sug = suggest_pose(cloud, skel, small_scene.decoder, ledger, cfg)
    assert len(sug.traces) == cfg.restarts
    for trace in sug.traces:
        assert len(trace) == cfg.local_steps + 1
        diffs = np.diff(trace)
        assert np.all(diffs <= 0.0)
    # the winner is the minimum over restart finals
    finals = [t[-1] for t in sug.traces]
    assert sug.objective_value == pytest.approx(min(finals), abs=0.0)


def test_suggestion_matches_objective(small_scene):
    """The reported value equals the objective recomputed at the suggestion."""
    cloud, skel = small_scene.cloud, small_scene.skeleton
    ledger = accumulate(cloud, skel, small_scene.frames, edits=[])
    cfg = SuggestConfig(seed=3, **FAST)
    sug = suggest_pose(cloud, skel, small_scene.decoder, ledger, cfg)
    pose = small_scene.decoder.decode(sug.latent)
    val = objective_for_pose(
        cloud, skel, ledger, pose, sug.camera_params.to_camera_pose()
    )
    assert val == pytest.approx(sug.objective_value, abs=1e-12)
    assert sug.objective_value <= 0.0
    # camera stayed inside the configured bounds
    assert cfg.radius_bounds[0] <= sug.camera_params.radius <= cfg.radius_bounds[1]
    lo, hi = cfg.elevation_bounds
    assert lo <= sug.camera_params.elevation <= hi
    assert np.max(np.abs(sug.latent.z)) <= 4.0


def test_flat_objective_still_returns(small_scene):
    """Constant ledger: deficit is zero everywhere, search has no signal."""
    cloud, skel = small_scene.cloud, small_scene.skeleton
    ledger = VisibilityLedger(
        values=np.ones(len(cloud)), mix_weight=0.01, frame_count=1, edit_count=0
    )
    sug = suggest_pose(cloud, skel, small_scene.decoder, ledger,
                       SuggestConfig(seed=0, restarts=1, local_steps=3,
                                     probe_resolution=32, probe_focal=25.0))
    assert isinstance(sug, Suggestion)
    assert sug.objective_value == 0.0
    assert np.all(sug.latent.z == 0.0)  # nothing accepted off the start


def test_suggest_ledger_size_mismatch(small_scene):
    cloud, skel = small_scene.cloud, small_scene.skeleton
    ledger = VisibilityLedger(
        values=np.ones(3), mix_weight=0.01, frame_count=1, edit_count=0
    )
    with pytest.raises(StateError, match="ledger"):
        suggest_pose(cloud, skel, small_scene.decoder, ledger, SuggestConfig(**FAST))


def test_record_is_json_safe(small_scene):
    import json

    cloud, skel = small_scene.cloud, small_scene.skeleton
    ledger = accumulate(cloud, skel, small_scene.frames, edits=[])
    sug = suggest_pose(cloud, skel, small_scene.decoder, ledger,
                       SuggestConfig(seed=0, restarts=1, local_steps=2,
                                     probe_resolution=32, probe_focal=25.0))
    rec = sug.to_record()
    text = json.dumps(rec, sort_keys=True)
    assert json.loads(text) == rec
    assert len(rec["z"]) == small_scene.decoder.latent_dim
    assert set(rec["camera"]) == {"azimuth", "elevation", "radius", "look_at"}
