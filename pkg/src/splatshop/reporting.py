"""Writers for evaluation reports and training traces.

Each writer emits machine-readable output (JSON and/or CSV) plus a
rendered PNG figure alongside it, so a report directory is directly
inspectable without another tool.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

from .errors import ArgumentError


def write_metrics_report(report: dict, out_dir, stem: str = "metrics") -> dict[str, Path]:
    """Write an evaluate() report as JSON + per-frame CSV + figure.

    Returns the paths written, keyed by format.
    """
    if "frames" not in report:
        raise ArgumentError("report has no 'frames' list")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {
        "json": out / f"{stem}.json",
        "csv": out / f"{stem}.csv",
        "figure": out / f"{stem}.png",
    }

    with open(paths["json"], "w") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)
        fh.write("\n")

    frames = report["frames"]
    with open(paths["csv"], "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["frame", "iou", "psnr", "ssim"])
        for i, row in enumerate(frames):
            writer.writerow([i, row["iou"], row["psnr"], row["ssim"]])
        writer.writerow(
            ["mean", report["mean_iou"], report["mean_psnr"], report["mean_ssim"]]
        )

    xs = list(range(len(frames)))
    fig, axes = plt.subplots(1, 3, figsize=(12, 3.2))
    for ax, key, mean_key in zip(
        axes, ("iou", "psnr", "ssim"), ("mean_iou", "mean_psnr", "mean_ssim")
    ):
        ax.bar(xs, [row[key] for row in frames], color="#4878a8")
        ax.axhline(report[mean_key], color="#c44e52", linewidth=1.2, label="mean")
        ax.set_title(key.upper())
        ax.set_xlabel("frame")
        ax.legend(loc="lower right", fontsize=8)
    fig.tight_layout()
    fig.savefig(paths["figure"], dpi=110)
    plt.close(fig)
    return paths


def write_loss_trace(
    trace: list[tuple[int, str, float]], out_dir, stem: str = "loss"
) -> dict[str, Path]:
    """Write a fine-tune loss trace as CSV + curve figure.

    Trace rows are (step, sample source, loss); edit-driven steps are
    marked on the curve so masked-loss progress is visible separately.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {"csv": out / f"{stem}.csv", "figure": out / f"{stem}.png"}

    with open(paths["csv"], "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["step", "source", "loss"])
        writer.writerows(trace)

    fig, ax = plt.subplots(figsize=(8, 3.6))
    if trace:
        steps = [t[0] for t in trace]
        losses = [t[2] for t in trace]
        ax.plot(steps, losses, color="#4878a8", linewidth=0.8, label="loss")
        edit_pts = [(s, l) for s, src, l in trace if src == "edit"]
        if edit_pts:
            ax.scatter(
                [p[0] for p in edit_pts],
                [p[1] for p in edit_pts],
                s=6,
                color="#c44e52",
                label="edit sample",
                zorder=3,
            )
        ax.legend(loc="upper right", fontsize=8)
    ax.set_xlabel("step")
    ax.set_ylabel("loss")
    fig.tight_layout()
    fig.savefig(paths["figure"], dpi=110)
    plt.close(fig)
    return paths
