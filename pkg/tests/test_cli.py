"""Command-line driver: every subcommand exercised in-process, one smoke
run through a real subprocess."""

import json
import subprocess
import sys
from types import SimpleNamespace

import numpy as np
import pytest
from PIL import Image

from splatshop import cli, harness, raster
from splatshop.camera import CameraPose
from splatshop.dataset import load_eval_frames, load_frames, save_edits
from splatshop.gaussians import GaussianCloud
from splatshop.rig import Skeleton, canonical_pose

SYNTH = ["--count", "300", "--frames", "3", "--eval-frames", "2", "--resolution", "48"]


@pytest.fixture(scope="module")
def cli_ws(tmp_path_factory):
    """One small synthesized scene plus its injected corruption."""
    base = tmp_path_factory.mktemp("cli")
    scene = base / "scene"
    assert cli.main(["synth", "--out", str(scene), "--seed", "7", *SYNTH]) == 0
    corrupt = base / "corrupt"
    rc = cli.main(
        [
            "inject",
            "--avatar", str(scene / "avatar.bin"),
            "--skeleton", str(scene / "skeleton.json"),
            "--out", str(corrupt),
            "--floaters", "2",
            "--recolor", "1",
            "--seed", "7",
        ]
    )
    assert rc == 0
    return SimpleNamespace(base=base, scene=scene, corrupt=corrupt)


def test_synth_writes_scene_assets(cli_ws):
    scene = cli_ws.scene
    cloud = GaussianCloud.load(scene / "avatar.bin")
    skel = Skeleton.load(scene / "skeleton.json")
    meta = json.loads((scene / "scene.json").read_text())
    assert meta["gaussians"] == len(cloud)
    assert meta["seed"] == 7
    assert len(meta["hidden_cluster"]) == 30
    assert meta["hidden_cluster"] == list(range(len(cloud) - 30, len(cloud)))
    assert len(load_frames(scene / "dataset", skel.joint_count)) == 3
    assert len(load_eval_frames(scene / "eval", skel.joint_count)) == 2
    assert (scene / "decoder.bin").exists()


def test_synth_without_hidden_cluster(cli_ws, tmp_path):
    out = tmp_path / "plain"
    rc = cli.main(
        ["synth", "--out", str(out), "--seed", "7", "--no-hidden-cluster", *SYNTH]
    )
    assert rc == 0
    assert json.loads((out / "scene.json").read_text())["hidden_cluster"] == []


def test_inject_writes_manifest(cli_ws):
    original = GaussianCloud.load(cli_ws.scene / "avatar.bin")
    corrupted = GaussianCloud.load(cli_ws.corrupt / "corrupted.bin")
    manifest = json.loads((cli_ws.corrupt / "manifest.json").read_text())
    assert len(manifest["floaters"]) == 2
    assert len(manifest["recolored"]) >= 1
    assert len(corrupted) == len(original) + 2
    assert manifest["floaters"] == [len(original), len(original) + 1]


def test_render_orbit_flags(cli_ws, tmp_path):
    out = tmp_path / "view.png"
    rc = cli.main(
        [
            "render",
            "--checkpoint", str(cli_ws.scene / "avatar.bin"),
            "--skeleton", str(cli_ws.scene / "skeleton.json"),
            "--out", str(out),
            "--azimuth", "0.8",
            "--resolution", "48",
        ]
    )
    assert rc == 0
    with Image.open(out) as img:
        arr = np.asarray(img.convert("RGB"), dtype=np.float64) / 255.0
    assert arr.shape == (48, 48, 3)

    cloud = GaussianCloud.load(cli_ws.scene / "avatar.bin")
    skel = Skeleton.load(cli_ws.scene / "skeleton.json")
    cam = harness.orbit_camera(
        0.8, 0.12, 2.4, cloud.means.astype(np.float64).mean(axis=0), 48
    )
    image = raster.rasterize(cloud, cam, skeleton=skel, body_pose=canonical_pose(skel))
    assert np.max(np.abs(arr - np.clip(image.pixels, 0.0, 1.0))) <= 0.5 / 255.0 + 1e-12


def test_render_explicit_pose(cli_ws, tmp_path):
    cloud = GaussianCloud.load(cli_ws.scene / "avatar.bin")
    cam = harness.orbit_camera(
        0.0, 0.1, 2.5, cloud.means.astype(np.float64).mean(axis=0), 40
    )
    pose = json.dumps({"body": "canonical", "camera": cam.to_dict()})
    a, b = tmp_path / "a.png", tmp_path / "b.png"
    for out in (a, b):
        rc = cli.main(
            [
                "render",
                "--checkpoint", str(cli_ws.scene / "avatar.bin"),
                "--skeleton", str(cli_ws.scene / "skeleton.json"),
                "--out", str(out),
                "--pose", pose,
            ]
        )
        assert rc == 0
    assert a.read_bytes() == b.read_bytes()


def test_suggest_is_deterministic(cli_ws, tmp_path):
    args = [
        "suggest",
        "--checkpoint", str(cli_ws.scene / "avatar.bin"),
        "--skeleton", str(cli_ws.scene / "skeleton.json"),
        "--decoder", str(cli_ws.scene / "decoder.bin"),
        "--dataset", str(cli_ws.scene / "dataset"),
        "--seed", "4",
        "--restarts", "2",
        "--local-steps", "5",
    ]
    a, b = tmp_path / "a.json", tmp_path / "b.json"
    assert cli.main([*args, "--out", str(a)]) == 0
    assert cli.main([*args, "--out", str(b)]) == 0
    assert a.read_bytes() == b.read_bytes()
    record = json.loads(a.read_text())
    assert set(record) == {"camera", "objective", "seed", "z"}
    assert record["objective"] <= 0.0


def test_refine_consumes_prepared_edits(cli_ws, tmp_path):
    corrupted = GaussianCloud.load(cli_ws.corrupt / "corrupted.bin")
    gt = GaussianCloud.load(cli_ws.scene / "avatar.bin")
    skel = Skeleton.load(cli_ws.scene / "skeleton.json")
    cam = harness.orbit_camera(
        1.1, 0.12, 2.4, corrupted.means.astype(np.float64).mean(axis=0), 48
    )
    edit = harness.oracle_edit(gt, corrupted, skel, canonical_pose(skel), cam)
    edits_dir = tmp_path / "edits"
    save_edits(edits_dir, [edit])

    out = tmp_path / "refined"
    rc = cli.main(
        [
            "refine",
            "--checkpoint", str(cli_ws.corrupt / "corrupted.bin"),
            "--skeleton", str(cli_ws.scene / "skeleton.json"),
            "--dataset", str(cli_ws.scene / "dataset"),
            "--edits", str(edits_dir),
            "--out", str(out),
            "--steps", "20",
            "--seed", "1",
        ]
    )
    assert rc == 0
    summary = json.loads((out / "refine.json").read_text())
    assert summary["edits_consumed"] == 1
    refined = GaussianCloud.load(out / "refined.bin")
    assert summary["gaussians"] == len(refined)
    assert (out / "loss.csv").exists() and (out / "loss.png").exists()
    rows = (out / "loss.csv").read_text().strip().splitlines()
    assert rows[0] == "step,source,loss"
    assert len(rows) == 21


def test_refine_without_edit_source_fails(cli_ws, tmp_path, capsys):
    rc = cli.main(
        [
            "refine",
            "--checkpoint", str(cli_ws.corrupt / "corrupted.bin"),
            "--skeleton", str(cli_ws.scene / "skeleton.json"),
            "--dataset", str(cli_ws.scene / "dataset"),
            "--out", str(tmp_path / "x"),
        ]
    )
    assert rc == 2
    assert "--edits or --oracle-gt" in capsys.readouterr().err


def test_evaluate_reports_scores(cli_ws, tmp_path, capsys):
    out = tmp_path / "report"
    rc = cli.main(
        [
            "evaluate",
            "--checkpoint", str(cli_ws.scene / "avatar.bin"),
            "--skeleton", str(cli_ws.scene / "skeleton.json"),
            "--eval", str(cli_ws.scene / "eval"),
            "--out", str(out),
        ]
    )
    assert rc == 0
    report = json.loads((out / "metrics.json").read_text())
    # the checkpoint IS the ground truth behind these eval frames
    assert report["mean_iou"] > 0.99
    assert report["mean_psnr"] >= 60.0
    assert (out / "metrics.csv").exists() and (out / "metrics.png").exists()
    assert "IoU" in capsys.readouterr().out


def test_errors_exit_2_with_message(tmp_path, capsys):
    rc = cli.main(
        [
            "render",
            "--checkpoint", str(tmp_path / "missing.bin"),
            "--skeleton", str(tmp_path / "missing.json"),
            "--out", str(tmp_path / "x.png"),
        ]
    )
    assert rc == 2
    assert "error:" in capsys.readouterr().err


def test_console_entry_point_subprocess(cli_ws, tmp_path):
    out = tmp_path / "sub.png"
    proc = subprocess.run(
        [
            sys.executable, "-m", "splatshop",
            "render",
            "--checkpoint", str(cli_ws.scene / "avatar.bin"),
            "--skeleton", str(cli_ws.scene / "skeleton.json"),
            "--out", str(out),
            "--resolution", "32",
        ],
        capture_output=True,
        text=True,
    )
    assert proc.returncode == 0, proc.stderr
    assert "rendered" in proc.stdout
    assert out.exists()


def test_serve_help_lists_flags(capsys):
    with pytest.raises(SystemExit) as exc:
        cli.main(["serve", "--help"])
    assert exc.value.code == 0
    text = capsys.readouterr().out
    assert "--root" in text and "--inpaint-endpoint" in text
