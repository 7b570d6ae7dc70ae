"""Directory formats for video frames, edited frames, and evaluation sets.

A dataset directory holds ``frames/NNNN.png`` plus ``poses.json`` (one
record per frame: ``{"body": [3K+3 floats], "camera": {...}}``). An edit
directory holds ``edits/NNNN.png`` + ``masks/NNNN.png`` + ``edits.json``,
where each record carries poses and a replayable edit log; a background
tool entry references its painted sub-mask as a sibling PNG. Evaluation
directories mirror datasets with an extra ``masks/`` of actor masks.
Images are 8-bit RGB PNG, masks 8-bit grayscale (0 or 255).
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np
from PIL import Image

from .camera import CameraPose
from .errors import DataError
from .metrics import EvalFrame
from .rig import BodyPose
from .visibility import EditedFrame, Frame


def save_png(path: str | Path, image: np.ndarray) -> None:
    """Write a float image in [0, 1] (HxW or HxWx3) as 8-bit PNG."""
    arr = np.asarray(image, dtype=np.float64)
    data = np.round(np.clip(arr, 0.0, 1.0) * 255.0).astype(np.uint8)
    mode = "L" if data.ndim == 2 else "RGB"
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(data, mode=mode).save(path)


def load_png(path: str | Path) -> np.ndarray:
    """Read a PNG as float64 in [0, 1]; RGB images come back HxWx3."""
    path = Path(path)
    if not path.exists():
        raise DataError(f"missing image file: {path}")
    with Image.open(path) as img:
        if img.mode not in ("L", "RGB"):
            img = img.convert("RGB")
        return np.asarray(img, dtype=np.float64) / 255.0


def save_mask_png(path: str | Path, mask: np.ndarray) -> None:
    save_png(path, np.asarray(mask).astype(np.float64))


def load_mask_png(path: str | Path) -> np.ndarray:
    return load_png(path) >= 0.5


# -- video frame datasets --------------------------------------------------


def save_frames(root: str | Path, frames: list[Frame]) -> None:
    root = Path(root)
    (root / "frames").mkdir(parents=True, exist_ok=True)
    records = []
    for i, fr in enumerate(frames):
        save_png(root / "frames" / f"{i:04d}.png", fr.image)
        records.append(
            {"body": fr.body_pose.flatten(), "camera": fr.camera_pose.to_dict()}
        )
    (root / "poses.json").write_text(json.dumps(records, indent=1))


def load_frames(root: str | Path, joint_count: int) -> list[Frame]:
    root = Path(root)
    poses_path = root / "poses.json"
    if not poses_path.exists():
        raise DataError(f"missing poses file: {poses_path}")
    try:
        records = json.loads(poses_path.read_text())
    except json.JSONDecodeError as e:
        raise DataError(f"{poses_path}: invalid JSON: {e}") from e
    frames = []
    for i, rec in enumerate(records):
        try:
            body = BodyPose.from_flat(rec["body"], joint_count)
            camera = CameraPose.from_dict(rec["camera"])
        except (KeyError, TypeError) as e:
            raise DataError(f"{poses_path}: record {i}: {e}") from e
        image = load_png(root / "frames" / f"{i:04d}.png")
        frames.append(Frame(image=image, body_pose=body, camera_pose=camera))
    return frames


# -- edited frames ----------------------------------------------------------


def save_edits(root: str | Path, edits: list[EditedFrame]) -> None:
    root = Path(root)
    (root / "edits").mkdir(parents=True, exist_ok=True)
    (root / "masks").mkdir(parents=True, exist_ok=True)
    records = []
    for i, ed in enumerate(edits):
        save_png(root / "edits" / f"{i:04d}.png", ed.image)
        save_mask_png(root / "masks" / f"{i:04d}.png", ed.mask)
        log_out = []
        for j, entry in enumerate(ed.edit_log):
            entry_out = {k: v for k, v in entry.items() if k != "mask"}
            if "mask" in entry:
                ref = f"masks/{i:04d}_op{j}.png"
                save_mask_png(root / ref, entry["mask"])
                entry_out["mask_ref"] = ref
            log_out.append(entry_out)
        records.append(
            {
                "body": ed.body_pose.flatten(),
                "camera": ed.camera_pose.to_dict(),
                "edit_log": log_out,
            }
        )
    (root / "edits.json").write_text(json.dumps(records, indent=1))


def load_edits(root: str | Path, joint_count: int) -> list[EditedFrame]:
    root = Path(root)
    index_path = root / "edits.json"
    if not index_path.exists():
        raise DataError(f"missing edit index: {index_path}")
    try:
        records = json.loads(index_path.read_text())
    except json.JSONDecodeError as e:
        raise DataError(f"{index_path}: invalid JSON: {e}") from e
    edits = []
    for i, rec in enumerate(records):
        try:
            body = BodyPose.from_flat(rec["body"], joint_count)
            camera = CameraPose.from_dict(rec["camera"])
        except (KeyError, TypeError) as e:
            raise DataError(f"{index_path}: record {i}: {e}") from e
        log = []
        for entry in rec.get("edit_log", []):
            entry = dict(entry)
            ref = entry.pop("mask_ref", None)
            if ref is not None:
                entry["mask"] = load_mask_png(root / ref)
            log.append(entry)
        edits.append(
            EditedFrame(
                image=load_png(root / "edits" / f"{i:04d}.png"),
                mask=load_mask_png(root / "masks" / f"{i:04d}.png"),
                body_pose=body,
                camera_pose=camera,
                edit_log=log,
            )
        )
    return edits


# -- evaluation sets --------------------------------------------------------


def save_eval_frames(root: str | Path, frames: list[EvalFrame]) -> None:
    root = Path(root)
    (root / "frames").mkdir(parents=True, exist_ok=True)
    (root / "masks").mkdir(parents=True, exist_ok=True)
    records = []
    for i, fr in enumerate(frames):
        save_png(root / "frames" / f"{i:04d}.png", fr.image)
        save_mask_png(root / "masks" / f"{i:04d}.png", fr.mask)
        records.append(
            {"body": fr.body_pose.flatten(), "camera": fr.camera_pose.to_dict()}
        )
    (root / "poses.json").write_text(json.dumps(records, indent=1))


def load_eval_frames(root: str | Path, joint_count: int) -> list[EvalFrame]:
    root = Path(root)
    poses_path = root / "poses.json"
    if not poses_path.exists():
        raise DataError(f"missing poses file: {poses_path}")
    records = json.loads(poses_path.read_text())
    frames = []
    for i, rec in enumerate(records):
        frames.append(
            EvalFrame(
                image=load_png(root / "frames" / f"{i:04d}.png"),
                mask=load_mask_png(root / "masks" / f"{i:04d}.png"),
                body_pose=BodyPose.from_flat(rec["body"], joint_count),
                camera_pose=CameraPose.from_dict(rec["camera"]),
            )
        )
    return frames
