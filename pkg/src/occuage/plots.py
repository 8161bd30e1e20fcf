"""Matplotlib figure rendering for training and evaluation reports.

Figures are written next to the delimited text outputs. PNG metadata is
suppressed so regenerating with identical inputs yields identical bytes.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .trainer import METRIC_FIELDS

_SAVE_KWARGS = {"dpi": 110, "metadata": {"Software": None}}


def _finish(fig, path: Path | str) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, **_SAVE_KWARGS)
    plt.close(fig)
    return path


def save_loss_curves(history: np.ndarray, path: Path | str) -> Path:
    """Per-term loss trajectories over training steps."""
    fig, ax = plt.subplots(figsize=(7, 4.2))
    steps = history[:, METRIC_FIELDS.index("step")]
    for name in ("personalized", "adversarial_g", "adversarial_d", "triplet"):
        ax.plot(steps, history[:, METRIC_FIELDS.index(name)], label=name, linewidth=0.9)
    ax.set_xlabel("step")
    ax.set_ylabel("loss")
    ax.set_yscale("log")
    ax.legend(frameon=False, fontsize=8)
    ax.set_title("training loss terms")
    fig.tight_layout()
    return _finish(fig, path)


def save_separation_heatmap(matrix: np.ndarray, names: list[str], path: Path | str) -> Path:
    """Pairwise mean L1 between outputs under different conditions."""
    fig, ax = plt.subplots(figsize=(4.6, 4))
    im = ax.imshow(matrix, cmap="viridis")
    ax.set_xticks(range(len(names)), names, rotation=45, ha="right", fontsize=8)
    ax.set_yticks(range(len(names)), names, fontsize=8)
    for i in range(len(names)):
        for j in range(len(names)):
            ax.text(j, i, f"{matrix[i, j]:.3f}", ha="center", va="center",
                    color="white", fontsize=7)
    fig.colorbar(im, ax=ax, shrink=0.85)
    ax.set_title("condition separation (mean L1)")
    fig.tight_layout()
    return _finish(fig, path)


def save_sample_grid(
    rows: list[list[np.ndarray]],
    row_labels: list[str],
    col_labels: list[str],
    path: Path | str,
) -> Path:
    """Grid of images given as uint8 HWC arrays."""
    n_rows, n_cols = len(rows), max(len(r) for r in rows)
    fig, axes = plt.subplots(
        n_rows, n_cols, figsize=(1.6 * n_cols, 1.75 * n_rows), squeeze=False
    )
    for i, row in enumerate(rows):
        for j in range(n_cols):
            ax = axes[i][j]
            ax.set_axis_off()
            if j < len(row):
                ax.imshow(row[j])
                if i == 0 and j < len(col_labels):
                    ax.set_title(col_labels[j], fontsize=8)
        axes[i][0].set_axis_on()
        axes[i][0].set_xticks([])
        axes[i][0].set_yticks([])
        axes[i][0].set_ylabel(row_labels[i] if i < len(row_labels) else "", fontsize=8)
    fig.tight_layout()
    return _finish(fig, path)
