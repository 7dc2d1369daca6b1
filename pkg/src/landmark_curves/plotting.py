"""Matplotlib figures for training logs and evaluation reports (Agg backend, files only)."""
from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

STAGE_COLORS = ("#1b9e77", "#d95f02", "#7570b3", "#e7298a")


def _save(fig, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, dpi=120, bbox_inches="tight")
    plt.close(fig)
    return path


def plot_training_log(rows, path, step_losses=None) -> Path:
    """Per-epoch loss terms (log scale) from rows laid out like the TSV metric log."""
    rows = np.asarray(rows, dtype=np.float64)
    ncols = 2 if step_losses is not None and len(step_losses) else 1
    fig, axes = plt.subplots(1, ncols, figsize=(5.5 * ncols, 3.8), squeeze=False)
    ax = axes[0, 0]
    epoch = rows[:, 0]
    ax.semilogy(epoch, rows[:, -1], color="k", lw=1.8, label="total")
    ax.semilogy(epoch, rows[:, 2], color="0.5", ls="--", label="seg (Dice)")
    ax.semilogy(epoch, rows[:, 3], color="0.5", ls=":", label="induction")
    for h in range(4):
        ax.semilogy(epoch, rows[:, 8 + h], color=STAGE_COLORS[h], lw=1, label=f"curve h={h}")
    ax.set_xlabel("epoch")
    ax.set_ylabel("loss")
    ax.legend(fontsize=7, ncol=2, frameon=False)
    twin = ax.twinx()
    twin.plot(epoch, rows[:, 1], color="tab:red", alpha=0.4, lw=1)
    twin.set_ylabel(r"$\lambda_d$", color="tab:red")
    twin.set_ylim(0, 1.05)
    if ncols == 2:
        ax2 = axes[0, 1]
        ax2.semilogy(np.arange(1, len(step_losses) + 1), step_losses, color="k", lw=0.8)
        ax2.set_xlabel("optimizer step")
        ax2.set_ylabel("batch loss")
    return _save(fig, path)


def plot_metric_report(report, path) -> Path:
    """Grouped bars of DSC / IoU per category next to an ASSD panel."""
    cats = list(report.categories) + ["mean"]
    dsc = [report.per_category[c]["dsc"] for c in report.categories] + [report.dsc]
    iou = [report.per_category[c]["iou"] for c in report.categories] + [report.iou]
    dist = [report.per_category[c]["assd"] for c in report.categories] + [report.assd]
    x = np.arange(len(cats))
    fig, (a1, a2) = plt.subplots(1, 2, figsize=(9, 3.5), gridspec_kw={"width_ratios": [2, 1]})
    a1.bar(x - 0.2, dsc, 0.4, label="DSC", color="#377eb8")
    a1.bar(x + 0.2, iou, 0.4, label="IoU", color="#4daf4a")
    a1.set_xticks(x, cats)
    a1.set_ylim(0, 100)
    a1.set_ylabel("%")
    a1.legend(frameon=False)
    a2.bar(x, dist, 0.6, color="#984ea3")
    a2.set_xticks(x, cats, rotation=30)
    a2.set_ylabel("ASSD [px]")
    fig.suptitle(f"{report.image_count} images, FWIoU {report.fwiou:.1f}%", fontsize=9)
    return _save(fig, path)


def plot_stage_distances(distances, path) -> Path:
    """Per-image mean point-to-GT distance at each stage (one line per image)."""
    d = np.asarray(distances, dtype=np.float64)
    fig, ax = plt.subplots(figsize=(4.5, 3.5))
    stages = np.arange(d.shape[1])
    for row in d:
        ax.plot(stages, row, color="0.6", lw=0.8, marker="o", ms=2)
    ax.plot(stages, np.nanmean(d, axis=0), color="k", lw=2, marker="o", label="mean")
    ax.set_xticks(stages, [f"h={h}" for h in stages])
    ax.set_ylabel("distance to GT [px]")
    ax.legend(frameon=False)
    return _save(fig, path)
