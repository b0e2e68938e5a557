"""Render report figures next to the delimited outputs.

Every CLI command that writes CSV/JSON reports also drops a PNG rendering of
the same data for quick inspection.  All figures use the Agg backend so the
commands stay headless.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .masking import LEVELS, MaskSpec
from .semantics import KeyPointSet, MainPeriod


def save_loss_curves(trace: list[dict], path: str | Path) -> None:
    """Per-epoch pre-training losses, one line per mask level plus the total."""
    fig, ax = plt.subplots(figsize=(7, 4))
    epochs = [row["epoch"] for row in trace]
    for level in LEVELS:
        series = [row.get(f"loss_{level}") for row in trace]
        if any(v is not None for v in series):
            ax.plot(epochs, series, label=level)
    ax.plot(epochs, [row["total"] for row in trace], label="weighted total",
            color="black", linewidth=2)
    ax.set_xlabel("epoch")
    ax.set_ylabel("masked reconstruction loss")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def save_finetune_curves(history: list[dict], path: str | Path) -> None:
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(9, 3.5))
    epochs = [row["epoch"] for row in history]
    ax1.plot(epochs, [row["train_loss"] for row in history])
    ax1.set_xlabel("epoch")
    ax1.set_ylabel("train cross-entropy")
    ax2.plot(epochs, [row["val_accuracy"] for row in history], label="accuracy")
    ax2.plot(epochs, [row["val_macro_f1"] for row in history], label="macro-F1")
    ax2.set_xlabel("epoch")
    ax2.set_ylabel("validation metric")
    ax2.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def save_search_curve(history: list[dict], path: str | Path) -> None:
    """Performance per trial and the running best."""
    fig, ax = plt.subplots(figsize=(7, 4))
    iterations = [row["iteration"] for row in history]
    perf = [row["performance"] for row in history]
    ax.scatter(iterations, perf, s=18, label="trial")
    ax.plot(iterations, np.maximum.accumulate(perf), color="darkred", label="best so far")
    ax.set_xlabel("trial")
    ax.set_ylabel("validation performance")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def save_mask_preview(
    values: np.ndarray, specs: dict[str, MaskSpec], path: str | Path
) -> None:
    """Heatmap of the window plus one 0/1 mask grid per level."""
    fig, axes = plt.subplots(1, len(specs) + 1, figsize=(3 * (len(specs) + 1), 4))
    axes[0].imshow(values, aspect="auto", interpolation="nearest")
    axes[0].set_title("window")
    axes[0].set_xlabel("channel")
    axes[0].set_ylabel("time")
    for ax, (level, spec) in zip(axes[1:], specs.items()):
        ax.imshow(spec.bool_mask(), aspect="auto", interpolation="nearest", cmap="gray_r")
        ax.set_title(level)
        ax.set_xlabel("channel")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def save_semantics_figure(
    energy: np.ndarray,
    keypoints: KeyPointSet,
    period: MainPeriod | None,
    path: str | Path,
) -> None:
    """Energy series with detected peaks, valleys, and period-length markers."""
    fig, ax = plt.subplots(figsize=(8, 3.5))
    ax.plot(energy, color="steelblue", label="energy")
    if keypoints.peaks:
        ax.scatter(keypoints.peaks, energy[list(keypoints.peaks)], color="darkred",
                   marker="^", zorder=3, label="peaks")
    if keypoints.valleys:
        ax.scatter(keypoints.valleys, energy[list(keypoints.valleys)], color="darkgreen",
                   marker="v", zorder=3, label="valleys")
    if period is not None:
        t = int(np.floor(period.t_main + 0.5))
        for edge in range(t, len(energy), t):
            ax.axvline(edge, color="gray", linestyle=":", linewidth=0.8)
        ax.set_title(f"dominant period: {period.t_main:.1f} samples")
    ax.set_xlabel("time")
    ax.set_ylabel("energy")
    ax.legend(loc="upper right")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def save_confusion_matrix(
    y_true: np.ndarray, y_pred: np.ndarray, path: str | Path
) -> None:
    classes = sorted(set(int(c) for c in np.unique(np.concatenate([y_true, y_pred]))))
    size = len(classes)
    index = {c: i for i, c in enumerate(classes)}
    grid = np.zeros((size, size), dtype=int)
    for t, p in zip(y_true, y_pred):
        grid[index[int(t)], index[int(p)]] += 1
    fig, ax = plt.subplots(figsize=(4.5, 4))
    im = ax.imshow(grid, cmap="Blues")
    for i in range(size):
        for j in range(size):
            ax.text(j, i, str(grid[i, j]), ha="center", va="center", fontsize=8)
    ax.set_xticks(range(size), classes)
    ax.set_yticks(range(size), classes)
    ax.set_xlabel("predicted")
    ax.set_ylabel("true")
    fig.colorbar(im, ax=ax)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
