"""Command-line driver: every capability of the library is reachable
headlessly, so the full refinement pipeline runs without the UI or the
HTTP service. Every subcommand is deterministic given its inputs and
--seed; reports carry no wall-clock data.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import harness, raster
from .camera import CameraPose
from .dataset import (
    load_edits,
    load_eval_frames,
    load_frames,
    save_edits,
    save_eval_frames,
    save_frames,
    save_png,
)
from .errors import SplatError
from .gaussians import GaussianCloud
from .metrics import evaluate
from .reporting import write_loss_trace, write_metrics_report
from .rig import BodyPose, PoseDecoder, Skeleton, canonical_pose, default_decoder
from .suggest import SuggestConfig, suggest_pose
from .training import TrainConfig, delete_background_gaussians, run_finetune
from .visibility import accumulate


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except SplatError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return 2


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="splatshop",
        description="Gaussian-splat avatar refinement workbench",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic avatar scene + dataset")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--count", type=int, default=2000, help="approximate Gaussian count")
    p.add_argument("--frames", type=int, default=8, help="dataset view count")
    p.add_argument("--eval-frames", type=int, default=6)
    p.add_argument("--resolution", type=int, default=128)
    p.add_argument(
        "--hidden-cluster",
        action=argparse.BooleanOptionalAction,
        default=True,
        help="append the low-visibility cluster on the torso back",
    )
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("inject", help="corrupt an avatar with floaters and recolors")
    p.add_argument("--avatar", required=True)
    p.add_argument("--skeleton", required=True)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--floaters", type=int, default=10)
    p.add_argument("--recolor", type=int, default=3)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_inject)

    p = sub.add_parser("render", help="render a checkpoint to a PNG")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--skeleton", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--pose", help="JSON {body: flat angles | 'canonical', camera: {...}}")
    p.add_argument("--azimuth", type=float, default=0.0, help="orbit camera, rad")
    p.add_argument("--elevation", type=float, default=0.12)
    p.add_argument("--radius", type=float, default=2.4)
    p.add_argument("--resolution", type=int, default=128)
    p.set_defaults(func=cmd_render)

    p = sub.add_parser("suggest", help="compute the next body+camera suggestion")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--skeleton", required=True)
    p.add_argument("--decoder")
    p.add_argument("--dataset", required=True)
    p.add_argument("--edits", help="optional accepted-edits directory")
    p.add_argument("--out", required=True, help="suggestion JSON path")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--restarts", type=int, default=8)
    p.add_argument("--local-steps", type=int, default=40)
    p.set_defaults(func=cmd_suggest)

    p = sub.add_parser("refine", help="fold edits into the avatar")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--skeleton", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--edits", help="directory of prepared edits to consume in order")
    p.add_argument("--oracle-gt", help="ground-truth checkpoint: generate oracle edits")
    p.add_argument("--decoder", help="pose decoder (oracle mode)")
    p.add_argument("--iterations", type=int, default=5, help="oracle-edit iterations")
    p.add_argument("--steps", type=int, default=500, help="fine-tune steps per update")
    p.add_argument("--p-edit", type=float, default=0.3)
    p.add_argument("--restarts", type=int, default=8)
    p.add_argument("--local-steps", type=int, default=40)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_refine)

    p = sub.add_parser("evaluate", help="score a checkpoint against ground truth views")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--skeleton", required=True)
    p.add_argument("--eval", required=True, help="eval-frame directory")
    p.add_argument("--out", required=True, help="report directory")
    p.add_argument("--threshold", type=float, default=0.5, help="silhouette threshold")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("serve", help="run the HTTP service")
    p.add_argument("--root", required=True, help="session persistence root")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8000)
    p.add_argument("--inpaint-endpoint", help="external inpainting URL (stub if unset)")
    p.set_defaults(func=cmd_serve)

    return parser


def cmd_synth(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    params = harness.AvatarParams(count=args.count)
    cloud, skel = harness.make_synthetic_avatar(params, seed=args.seed)
    cluster: np.ndarray | None = None
    if args.hidden_cluster:
        cloud, cluster = harness.add_hidden_cluster(
            cloud, skel, seed=harness.derive_seed(args.seed, 3)
        )
    skel.save(out / "skeleton.json")
    cloud.save(out / "avatar.bin")
    default_decoder(skel).save(out / "decoder.bin")

    frames = harness.make_turntable_frames(
        cloud, skel, n_frames=args.frames, resolution=args.resolution
    )
    save_frames(out / "dataset", frames)
    eval_frames = harness.make_eval_frames(
        cloud, skel, n_frames=args.eval_frames, resolution=args.resolution
    )
    save_eval_frames(out / "eval", eval_frames)
    with open(out / "scene.json", "w") as fh:
        json.dump(
            {
                "seed": args.seed,
                "gaussians": len(cloud),
                "hidden_cluster": [int(i) for i in cluster] if cluster is not None else [],
                "frames": args.frames,
                "eval_frames": args.eval_frames,
                "resolution": args.resolution,
            },
            fh,
            indent=2,
        )
        fh.write("\n")
    print(f"synthesized {len(cloud)} Gaussians into {out}")
    return 0


def cmd_inject(args) -> int:
    cloud = GaussianCloud.load(args.avatar)
    skel = Skeleton.load(args.skeleton)
    spec = harness.ArtifactSpec(
        floater_count=args.floaters, recolor_patch_count=args.recolor, seed=args.seed
    )
    corrupted, manifest = harness.inject_artifacts(cloud, skel, spec)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    corrupted.save(out / "corrupted.bin")
    with open(out / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=2)
        fh.write("\n")
    print(
        f"injected {len(manifest['floaters'])} floaters, "
        f"{len(manifest['recolored'])} recolored Gaussians into {out}"
    )
    return 0


def _parse_pose(spec: str | None, skel: Skeleton) -> tuple[BodyPose, CameraPose | None]:
    if spec:
        payload = json.loads(spec)
        body_spec = payload.get("body", "canonical")
        body = (
            canonical_pose(skel)
            if body_spec == "canonical"
            else BodyPose.from_flat(body_spec, skel.joint_count)
        )
        cam = CameraPose.from_dict(payload["camera"])
        return body, cam
    return canonical_pose(skel), None  # camera built by caller from orbit flags


def cmd_render(args) -> int:
    cloud = GaussianCloud.load(args.checkpoint)
    skel = Skeleton.load(args.skeleton)
    body, cam = _parse_pose(args.pose, skel)
    if cam is None:
        center = cloud.means.astype(np.float64).mean(axis=0)
        cam = harness.orbit_camera(
            args.azimuth, args.elevation, args.radius, center, args.resolution
        )
    image = raster.rasterize(cloud, cam, skeleton=skel, body_pose=body)
    save_png(args.out, image.pixels)
    print(f"rendered {args.out}")
    return 0


def cmd_suggest(args) -> int:
    cloud = GaussianCloud.load(args.checkpoint)
    skel = Skeleton.load(args.skeleton)
    decoder = PoseDecoder.load(args.decoder) if args.decoder else default_decoder(skel)
    frames = load_frames(args.dataset, skel.joint_count)
    edits = load_edits(args.edits, skel.joint_count) if args.edits else []
    ledger = accumulate(cloud, skel, frames, edits)
    cfg = SuggestConfig(
        restarts=args.restarts, local_steps=args.local_steps, seed=args.seed
    )
    suggestion = suggest_pose(cloud, skel, decoder, ledger, cfg)
    with open(args.out, "w") as fh:
        json.dump(suggestion.to_record(), fh, indent=2, sort_keys=True)
        fh.write("\n")
    print(
        f"suggestion: objective {suggestion.objective_value:.6f}, "
        f"azimuth {suggestion.camera_params.azimuth:.3f} rad -> {args.out}"
    )
    return 0


def cmd_refine(args) -> int:
    cloud = GaussianCloud.load(args.checkpoint)
    skel = Skeleton.load(args.skeleton)
    frames = load_frames(args.dataset, skel.joint_count)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    train_cfg = TrainConfig(steps_per_update=args.steps, p_edit=args.p_edit)

    if args.oracle_gt:
        gt = GaussianCloud.load(args.oracle_gt)
        decoder = (
            PoseDecoder.load(args.decoder) if args.decoder else default_decoder(skel)
        )
        suggest_cfg = SuggestConfig(
            restarts=args.restarts, local_steps=args.local_steps
        )
        outcome = harness.oracle_refine_loop(
            gt,
            cloud,
            skel,
            frames,
            decoder,
            iterations=args.iterations,
            train_cfg=train_cfg,
            suggest_cfg=suggest_cfg,
            seed=args.seed,
        )
        outcome.cloud.save(out / "refined.bin")
        save_edits(out / "edits", outcome.edits)
        write_loss_trace(outcome.loss_trace, out)
        summary = {
            "iterations": [
                {
                    "suggestion": it.suggestion.to_record(),
                    "deleted_original_ids": it.deleted_original_ids,
                    "mean_masked_l1": it.mean_masked_l1,
                    "final_loss": it.final_loss,
                }
                for it in outcome.iterations
            ],
            "surviving_original_ids": [int(i) for i in outcome.surviving_ids],
            "gaussians": len(outcome.cloud),
        }
        with open(out / "refine.json", "w") as fh:
            json.dump(summary, fh, indent=2)
            fh.write("\n")
        print(
            f"oracle refinement: {args.iterations} iterations, "
            f"{len(outcome.cloud)} Gaussians -> {out}"
        )
        return 0

    if not args.edits:
        print("error: refine needs --edits or --oracle-gt", file=sys.stderr)
        return 2
    edits = load_edits(args.edits, skel.joint_count)
    trace: list[tuple[int, str, float]] = []
    deleted_total = 0
    for k, edit in enumerate(edits):
        cloud, deleted = delete_background_gaussians(
            cloud, skel, edit, train_cfg.delete_vis_threshold
        )
        deleted_total += len(deleted)
        cfg = TrainConfig.from_dict(
            {**train_cfg.to_dict(), "seed": harness.derive_seed(args.seed, 2, k)}
        )
        result = run_finetune(cloud, skel, frames, edits[: k + 1], cfg)
        cloud = result.cloud
        trace.extend(
            (step + k * cfg.steps_per_update, src, loss)
            for step, src, loss in result.trace
        )
    cloud.save(out / "refined.bin")
    write_loss_trace(trace, out)
    with open(out / "refine.json", "w") as fh:
        json.dump(
            {"edits_consumed": len(edits), "deleted": deleted_total, "gaussians": len(cloud)},
            fh,
            indent=2,
        )
        fh.write("\n")
    print(f"refined through {len(edits)} edits -> {out}")
    return 0


def cmd_evaluate(args) -> int:
    cloud = GaussianCloud.load(args.checkpoint)
    skel = Skeleton.load(args.skeleton)
    frames = load_eval_frames(args.eval, skel.joint_count)
    report = evaluate(cloud, skel, frames, threshold=args.threshold)
    paths = write_metrics_report(report, args.out)
    print(
        f"IoU {report['mean_iou']:.4f}  PSNR {report['mean_psnr']:.3f}  "
        f"SSIM {report['mean_ssim']:.4f} -> {paths['json']}"
    )
    return 0


def cmd_serve(args) -> int:
    from .service import serve

    serve(args.root, host=args.host, port=args.port,
          inpaint_endpoint=args.inpaint_endpoint)
    return 0


if __name__ == "__main__":
    sys.exit(main())
