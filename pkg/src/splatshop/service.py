"""HTTP facade for the refinement loop: suggest, edit, update.

Each session owns a directory under the persistence root holding its
dataset copy, accepted edits, checkpoint lineage, loss traces, and the
pending suggestion, in the same formats the library reads and writes.
Every completed operation leaves the directory loadable into an
equivalent session, and the newest checkpoint is reproducible by
replaying (initial checkpoint, dataset, ordered edits, per-update
config) from scratch; `replay_session` performs that audit.

Writers on one session are serialized by a lock; renders only read the
current cloud reference and may run concurrently.
"""

from __future__ import annotations

import base64
import io
import json
import shutil
import threading
import uuid
from dataclasses import replace
from pathlib import Path

import numpy as np
from fastapi import Body, FastAPI, HTTPException, Request
from fastapi.responses import JSONResponse, Response
from PIL import Image

from . import raster
from .camera import CameraPose
from .dataset import load_edits, load_frames, save_edits, save_frames
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
from .gaussians import GaussianCloud
from .harness import derive_seed
from .inpaint import InpaintClient, InpaintRequest
from .reporting import write_loss_trace
from .rig import BodyPose, PoseDecoder, Skeleton, canonical_pose, default_decoder
from .suggest import SuggestConfig, suggest_pose
from .training import TrainConfig, delete_background_gaussians, run_finetune
from .visibility import EditedFrame, accumulate

DISPLAY_SCALE = 4  # display render = probe resolution * scale

_STATUS: list[tuple[type, int]] = [
    (ConflictError, 409),
    (StateError, 412),
    (DataError, 422),
    (ConfigError, 422),
    (GatewayError, 502),
    (NonFiniteError, 500),
    (ArgumentError, 400),
    (SplatError, 400),
]


def _png_bytes(image: np.ndarray) -> bytes:
    data = np.round(np.clip(image, 0.0, 1.0) * 255.0).astype(np.uint8)
    buf = io.BytesIO()
    Image.fromarray(data).save(buf, format="PNG")
    return buf.getvalue()


def _image_from_png(raw: bytes) -> np.ndarray:
    try:
        with Image.open(io.BytesIO(raw)) as img:
            return np.asarray(img.convert("RGB"), dtype=np.float64) / 255.0
    except Exception as exc:
        raise ArgumentError(f"undecodable PNG payload: {exc}") from exc


def _mask_from_png(raw: bytes) -> np.ndarray:
    try:
        with Image.open(io.BytesIO(raw)) as img:
            return np.asarray(img.convert("L"), dtype=np.float64) / 255.0 >= 0.5
    except Exception as exc:
        raise ArgumentError(f"undecodable mask PNG: {exc}") from exc


def _b64(raw: bytes) -> str:
    return base64.b64encode(raw).decode("ascii")


def _from_b64(payload, what: str) -> bytes:
    if not isinstance(payload, str):
        raise ArgumentError(f"{what} must be a base64 string")
    try:
        return base64.b64decode(payload, validate=True)
    except Exception as exc:
        raise ArgumentError(f"{what} is not valid base64: {exc}") from exc


def probe_edit(edit: EditedFrame, scale: int) -> EditedFrame:
    """Downsample a display-resolution edit to probe resolution.

    The session stores the pixels the user submitted, but training and
    visibility accounting run at probe resolution so an update costs the
    same as one rendered probe, not ``scale**2`` times more. Images are
    box-averaged; masks pool with "any painted display pixel marks the
    probe pixel" so thin strokes survive; intrinsics divide by the same
    factor, which maps display pixel centers onto probe pixel centers
    exactly. A no-op when ``scale`` is 1 or the frame is not an exact
    multiple of it.
    """
    cam = edit.camera_pose
    if scale <= 1 or cam.width % scale or cam.height % scale:
        return edit
    h, w = cam.height // scale, cam.width // scale

    def pool(mask: np.ndarray) -> np.ndarray:
        return mask.reshape(h, scale, w, scale).any(axis=(1, 3))

    log = []
    for entry in edit.edit_log:
        entry = dict(entry)
        if "mask" in entry:
            entry["mask"] = pool(np.asarray(entry["mask"]).astype(bool))
        log.append(entry)
    return EditedFrame(
        image=edit.image.reshape(h, scale, w, scale, 3).mean(axis=(1, 3)),
        mask=pool(edit.mask),
        body_pose=edit.body_pose,
        camera_pose=replace(
            cam,
            fx=cam.fx / scale,
            fy=cam.fy / scale,
            cx=cam.cx / scale,
            cy=cam.cy / scale,
            width=w,
            height=h,
        ),
        edit_log=log,
    )


class Session:
    """One avatar refinement loop with its on-disk mirror."""

    def __init__(
        self,
        session_id: str,
        directory: Path,
        cloud: GaussianCloud,
        skeleton: Skeleton,
        decoder: PoseDecoder,
        frames,
        edits,
        seed: int,
        train_cfg: TrainConfig,
        suggest_cfg: SuggestConfig,
        display_scale: int = DISPLAY_SCALE,
    ):
        self.id = session_id
        self.dir = directory
        self.lock = threading.Lock()
        self.cloud = cloud
        self.skeleton = skeleton
        self.decoder = decoder
        self.frames = frames
        self.edits = edits
        self.seed = seed
        self.train_cfg = train_cfg
        self.suggest_cfg = suggest_cfg
        self.display_scale = display_scale
        self.trained_edits = 0
        self.suggestion_counter = 0
        self.pending: dict | None = None
        self.lineage: list[dict] = []

    # -- persistence ----------------------------------------------------------

    def persist_meta(self) -> None:
        meta = {
            "version": 1,
            "session_id": self.id,
            "seed": self.seed,
            "display_scale": self.display_scale,
            "train": self.train_cfg.to_dict(),
            "suggest": self.suggest_cfg.to_dict(),
            "trained_edits": self.trained_edits,
            "suggestion_counter": self.suggestion_counter,
            "pending": self.pending,
            "lineage": self.lineage,
        }
        tmp = self.dir / "session.json.tmp"
        with open(tmp, "w") as fh:
            json.dump(meta, fh, indent=2)
            fh.write("\n")
        tmp.replace(self.dir / "session.json")

    def persist_edits(self) -> None:
        save_edits(self.dir / "edits", self.edits)

    @classmethod
    def load(cls, directory: Path) -> "Session":
        meta_path = directory / "session.json"
        if not meta_path.exists():
            raise DataError(f"no session at {directory}")
        with open(meta_path) as fh:
            meta = json.load(fh)
        skeleton = Skeleton.load(directory / "skeleton.json")
        decoder = PoseDecoder.load(directory / "decoder.bin")
        frames = load_frames(directory / "dataset", skeleton.joint_count)
        edits_dir = directory / "edits"
        edits = (
            load_edits(edits_dir, skeleton.joint_count) if edits_dir.exists() else []
        )
        newest = directory / meta["lineage"][-1]["checkpoint"]
        cloud = GaussianCloud.load(newest)
        session = cls(
            session_id=meta["session_id"],
            directory=directory,
            cloud=cloud,
            skeleton=skeleton,
            decoder=decoder,
            frames=frames,
            edits=edits,
            seed=meta["seed"],
            train_cfg=TrainConfig.from_dict(meta["train"]),
            suggest_cfg=SuggestConfig.from_dict(meta["suggest"]),
            display_scale=meta["display_scale"],
        )
        session.trained_edits = meta["trained_edits"]
        session.suggestion_counter = meta["suggestion_counter"]
        session.pending = meta["pending"]
        session.lineage = meta["lineage"]
        return session

    # -- state ----------------------------------------------------------------

    def state(self) -> dict:
        return {
            "session_id": self.id,
            "k": self.trained_edits,
            "accepted_edits": len(self.edits),
            "gaussians": len(self.cloud),
            "checkpoints": [rec["checkpoint"] for rec in self.lineage],
            "pending_suggestion": self.pending["suggestion_id"] if self.pending else None,
            "seed": self.seed,
        }

    # -- suggestion -----------------------------------------------------------

    def get_suggestion(self) -> dict:
        if self.pending is None:
            self._compute_suggestion()
        render = (self.dir / "suggestion.png").read_bytes()
        return {
            "suggestion_id": self.pending["suggestion_id"],
            "render_png": _b64(render),
            "pose": self.pending["record"],
            "body": self.pending["body_flat"],
            "camera": self.pending["display_camera"],
        }

    def _training_edits(self) -> list[EditedFrame]:
        return [probe_edit(e, self.display_scale) for e in self.edits]

    def _compute_suggestion(self) -> None:
        ledger = accumulate(
            self.cloud, self.skeleton, self.frames, self._training_edits()
        )
        cfg = SuggestConfig.from_dict(
            {
                **self.suggest_cfg.to_dict(),
                "seed": derive_seed(self.seed, 1, self.suggestion_counter),
            }
        )
        suggestion = suggest_pose(self.cloud, self.skeleton, self.decoder, ledger, cfg)
        body = self.decoder.decode(suggestion.latent)
        probe = suggestion.camera_params
        s = self.display_scale
        display = replace(
            probe, fx=probe.fx * s, fy=probe.fy * s, width=probe.width * s, height=probe.height * s
        )
        display_cam = display.to_camera_pose()
        image = raster.rasterize(
            self.cloud, display_cam, skeleton=self.skeleton, body_pose=body
        )
        (self.dir / "suggestion.png").write_bytes(_png_bytes(image.pixels))
        self.pending = {
            "suggestion_id": f"sg{self.suggestion_counter:04d}",
            "record": suggestion.to_record(),
            "body_flat": body.flatten(),
            "display_camera": display_cam.to_dict(),
            "edit_submitted": False,
        }
        self.suggestion_counter += 1
        self.persist_meta()

    # -- edits ----------------------------------------------------------------

    def submit_edit(self, suggestion_id: str, image_png: bytes, mask_png: bytes,
                    edit_log: list[dict]) -> dict:
        if self.pending is None:
            raise StateError("no pending suggestion to edit")
        if suggestion_id != self.pending["suggestion_id"]:
            raise ConflictError(
                f"suggestion {suggestion_id!r} is stale; pending is "
                f"{self.pending['suggestion_id']!r}"
            )
        if self.pending["edit_submitted"]:
            raise ConflictError(
                "the pending suggestion already has a submitted edit; run update first"
            )
        image = _image_from_png(image_png)
        mask = _mask_from_png(mask_png)
        cam = CameraPose.from_dict(self.pending["display_camera"])
        if image.shape[:2] != (cam.height, cam.width):
            raise ArgumentError(
                f"edited image is {image.shape[1]}x{image.shape[0]}, "
                f"render is {cam.width}x{cam.height}"
            )
        if mask.shape != image.shape[:2]:
            raise ArgumentError("mask dimensions do not match the edited image")

        log_entries = []
        for i, entry in enumerate(edit_log or []):
            decoded = dict(entry)
            if "mask" in decoded:
                decoded["mask"] = _mask_from_png(
                    _from_b64(decoded["mask"], f"edit_log[{i}].mask")
                )
            log_entries.append(decoded)

        body = BodyPose.from_flat(self.pending["body_flat"], self.skeleton.joint_count)
        edit = EditedFrame(
            image=image,
            mask=mask,
            body_pose=body,
            camera_pose=cam,
            edit_log=log_entries,
        )
        self.edits.append(edit)
        self.pending["edit_submitted"] = True
        self.persist_edits()
        self.persist_meta()
        empty = not bool(mask.any())
        return {
            "edit_index": len(self.edits) - 1,
            "k": self.trained_edits,
            "warning": "mask has zero painted pixels" if empty else None,
        }

    # -- update ---------------------------------------------------------------

    def update(self, repeat: bool = False) -> dict:
        staged = len(self.edits) - self.trained_edits
        if staged == 0 and not repeat:
            raise StateError(
                "no new accepted edit; pass repeat=true to rerun training on "
                "the existing edit set"
            )
        update_index = len(self.lineage) - 1
        training_edits = self._training_edits()
        deleted = 0
        consumed = None
        if staged:
            consumed = self.trained_edits
            edit = training_edits[consumed]
            self.cloud, doomed = delete_background_gaussians(
                self.cloud, self.skeleton, edit, self.train_cfg.delete_vis_threshold
            )
            deleted = len(doomed)
            self.trained_edits += 1

        cfg = TrainConfig.from_dict(
            {**self.train_cfg.to_dict(), "seed": derive_seed(self.seed, 2, update_index)}
        )
        result = run_finetune(
            self.cloud, self.skeleton, self.frames,
            training_edits[: self.trained_edits], cfg,
        )
        self.cloud = result.cloud

        ckpt_rel = f"checkpoints/{len(self.lineage):03d}.bin"
        self.cloud.save(self.dir / ckpt_rel)
        traces = write_loss_trace(
            result.trace, self.dir / "traces", stem=f"{len(self.lineage):03d}"
        )
        self.lineage.append(
            {
                "checkpoint": ckpt_rel,
                "consumed_edit": consumed,
                "edits_used": self.trained_edits,
                "deleted": deleted,
                "train": cfg.to_dict(),
            }
        )
        if staged:
            self.pending = None  # the paired update is complete
        self.persist_meta()
        return {
            "checkpoint_id": ckpt_rel,
            "loss_trace": str(traces["csv"].relative_to(self.dir)),
            "deleted_count": deleted,
            "k": self.trained_edits,
        }

    # -- rendering ------------------------------------------------------------

    def render(self, pose_json: str) -> bytes:
        try:
            payload = json.loads(pose_json)
        except json.JSONDecodeError as exc:
            raise ArgumentError(f"pose is not valid JSON: {exc}") from exc
        if not isinstance(payload, dict) or "camera" not in payload:
            raise ArgumentError("pose JSON must carry 'body' and 'camera'")
        with self.lock:
            cloud = self.cloud
        body_spec = payload.get("body", "canonical")
        if body_spec == "canonical":
            body = canonical_pose(self.skeleton)
        else:
            body = BodyPose.from_flat(body_spec, self.skeleton.joint_count)
        cam = CameraPose.from_dict(payload["camera"])
        image = raster.rasterize(cloud, cam, skeleton=self.skeleton, body_pose=body)
        return _png_bytes(image.pixels)

    # -- inpaint ---------------------------------------------------------------

    def inpaint(self, client: InpaintClient, mask_png: bytes, prompt: str,
                candidates: int) -> dict:
        if self.pending is None:
            raise StateError("inpainting needs a pending suggestion")
        image = _image_from_png((self.dir / "suggestion.png").read_bytes())
        mask = _mask_from_png(mask_png)
        request = InpaintRequest(
            image=image, mask=mask, prompt=prompt, candidates=candidates
        )
        response = client.inpaint(request)
        return {
            "candidates": [_b64(_png_bytes(c)) for c in response.candidates],
            "prompt": prompt,
        }


class SessionStore:
    """Creates sessions and reloads persisted ones on demand."""

    def __init__(self, root: Path, inpaint_endpoint: str | None = None,
                 display_scale: int = DISPLAY_SCALE):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)
        self.inpaint = InpaintClient(inpaint_endpoint)
        self.display_scale = display_scale
        self._sessions: dict[str, Session] = {}
        self._lock = threading.Lock()

    def create(self, payload: dict) -> Session:
        for key in ("checkpoint", "dataset_dir"):
            if key not in payload:
                raise ArgumentError(f"missing required field {key!r}")
        ckpt_path = Path(payload["checkpoint"])
        if not ckpt_path.exists():
            raise DataError(f"checkpoint not found: {ckpt_path}")
        cloud = GaussianCloud.load(ckpt_path)

        if "skeleton" in payload and payload["skeleton"]:
            skeleton = Skeleton.load(payload["skeleton"])
        else:
            from .rig import default_skeleton

            skeleton = default_skeleton()
        decoder = (
            PoseDecoder.load(payload["decoder"])
            if payload.get("decoder")
            else default_decoder(skeleton)
        )
        frames = load_frames(payload["dataset_dir"], skeleton.joint_count)

        seed = int(payload.get("seed", 0))
        train_cfg = TrainConfig.from_dict(payload.get("train", {}) or {})
        suggest_cfg = SuggestConfig.from_dict(payload.get("suggest", {}) or {})

        session_id = uuid.uuid4().hex[:12]
        directory = self.root / session_id
        (directory / "checkpoints").mkdir(parents=True)
        shutil.copyfile(ckpt_path, directory / "checkpoints" / "000.bin")
        skeleton.save(directory / "skeleton.json")
        decoder.save(directory / "decoder.bin")
        save_frames(directory / "dataset", frames)

        session = Session(
            session_id=session_id,
            directory=directory,
            cloud=cloud,
            skeleton=skeleton,
            decoder=decoder,
            frames=frames,
            edits=[],
            seed=seed,
            train_cfg=train_cfg,
            suggest_cfg=suggest_cfg,
            display_scale=self.display_scale,
        )
        session.lineage = [{"checkpoint": "checkpoints/000.bin"}]
        session.persist_meta()
        with self._lock:
            self._sessions[session_id] = session
        return session

    def get(self, session_id: str) -> Session:
        with self._lock:
            if session_id in self._sessions:
                return self._sessions[session_id]
        directory = self.root / session_id
        if not (directory / "session.json").exists():
            raise HTTPException(status_code=404, detail=f"no session {session_id!r}")
        session = Session.load(directory)
        with self._lock:
            return self._sessions.setdefault(session_id, session)


def replay_session(directory: str | Path) -> dict:
    """Recompute the newest checkpoint from the initial one and compare bytes."""
    directory = Path(directory)
    with open(directory / "session.json") as fh:
        meta = json.load(fh)
    skeleton = Skeleton.load(directory / "skeleton.json")
    frames = load_frames(directory / "dataset", skeleton.joint_count)
    edits_dir = directory / "edits"
    edits = load_edits(edits_dir, skeleton.joint_count) if edits_dir.exists() else []
    edits = [probe_edit(e, meta["display_scale"]) for e in edits]
    lineage = meta["lineage"]
    cloud = GaussianCloud.load(directory / lineage[0]["checkpoint"])
    for record in lineage[1:]:
        cfg = TrainConfig.from_dict(record["train"])
        if record["consumed_edit"] is not None:
            cloud, _ = delete_background_gaussians(
                cloud, skeleton, edits[record["consumed_edit"]], cfg.delete_vis_threshold
            )
        cloud = run_finetune(
            cloud, skeleton, frames, edits[: record["edits_used"]], cfg
        ).cloud
    replay_path = directory / "replay.bin.tmp"
    cloud.save(replay_path)
    replayed = replay_path.read_bytes()
    replay_path.unlink()
    stored = (directory / lineage[-1]["checkpoint"]).read_bytes()
    return {
        "match": replayed == stored,
        "updates": len(lineage) - 1,
        "newest": lineage[-1]["checkpoint"],
    }


def build_app(
    root: str | Path,
    inpaint_endpoint: str | None = None,
    display_scale: int = DISPLAY_SCALE,
) -> FastAPI:
    store = SessionStore(Path(root), inpaint_endpoint, display_scale)
    app = FastAPI(title="splatshop")
    app.state.store = store

    @app.exception_handler(SplatError)
    async def _splat_error(request: Request, exc: SplatError):
        status = next(code for cls, code in _STATUS if isinstance(exc, cls))
        return JSONResponse(status_code=status, content={"detail": str(exc)})

    @app.post("/sessions")
    def create_session(payload: dict = Body(...)):
        session = store.create(payload)
        return {"session_id": session.id, **session.state()}

    @app.get("/sessions/{sid}")
    def get_state(sid: str):
        return store.get(sid).state()

    @app.get("/sessions/{sid}/suggestion")
    def get_suggestion(sid: str):
        session = store.get(sid)
        with session.lock:
            return session.get_suggestion()

    @app.post("/sessions/{sid}/edits")
    def submit_edits(sid: str, payload: dict = Body(...)):
        session = store.get(sid)
        for key in ("suggestion_id", "image", "mask"):
            if key not in payload:
                raise ArgumentError(f"missing required field {key!r}")
        image_png = _from_b64(payload["image"], "image")
        mask_png = _from_b64(payload["mask"], "mask")
        with session.lock:
            return session.submit_edit(
                payload["suggestion_id"], image_png, mask_png,
                payload.get("edit_log", []),
            )

    @app.post("/sessions/{sid}/update")
    def update_avatar(sid: str, payload: dict | None = Body(None)):
        session = store.get(sid)
        repeat = bool((payload or {}).get("repeat", False))
        with session.lock:
            return session.update(repeat=repeat)

    @app.get("/sessions/{sid}/render")
    def render_view(sid: str, pose: str):
        session = store.get(sid)
        return Response(content=session.render(pose), media_type="image/png")

    @app.post("/sessions/{sid}/inpaint")
    def request_inpaint(sid: str, payload: dict = Body(...)):
        session = store.get(sid)
        if "mask" not in payload:
            raise ArgumentError("missing required field 'mask'")
        mask_png = _from_b64(payload["mask"], "mask")
        with session.lock:
            return session.inpaint(
                store.inpaint,
                mask_png,
                str(payload.get("prompt", "")),
                int(payload.get("candidates", 3)),
            )

    return app


def serve(root: str | Path, host: str = "127.0.0.1", port: int = 8000,
          inpaint_endpoint: str | None = None) -> None:
    """Blocking uvicorn runner used by the command line."""
    import uvicorn

    uvicorn.run(build_app(root, inpaint_endpoint), host=host, port=port)
