# hargnn/plotting.py
"""
Self-contained SVG figures: attention heatmaps, feature scatterplots and raw
segment plots. Output is byte-stable for identical inputs.
"""

import logging
import os
from typing import Mapping, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

logger = logging.getLogger(__name__)

# Fixed element ids and no timestamp in the file
matplotlib.rcParams["svg.hashsalt"] = "hargnn"
matplotlib.rcParams["svg.fonttype"] = "path"
_SVG_METADATA = {"Date": None}


def _save(fig, path: str):
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    fig.savefig(path, format="svg", metadata=_SVG_METADATA)
    plt.close(fig)
    logger.debug(f"Wrote figure {path}")


def attention_heatmaps(maps: Mapping[str, np.ndarray], sensor_labels: Sequence[str], path: str):
    """One n x n heatmap per class, rows attending to columns."""
    names = list(maps)
    cols = max(1, min(4, len(names)))
    rows = max(1, int(np.ceil(len(names) / cols)))
    fig, axes = plt.subplots(rows, cols, figsize=(3.2 * cols, 3.0 * rows), squeeze=False)
    for ax in axes.flat[len(names):]:
        ax.axis("off")
    for ax, name in zip(axes.flat, names):
        m = np.asarray(maps[name])
        ax.imshow(m, vmin=0.0, vmax=1.0, cmap="viridis")
        ax.set_title(name, fontsize=9)
        ax.set_xticks(range(len(sensor_labels)))
        ax.set_xticklabels(sensor_labels, fontsize=7)
        ax.set_yticks(range(len(sensor_labels)))
        ax.set_yticklabels(sensor_labels, fontsize=7)
        for i in range(m.shape[0]):
            for j in range(m.shape[1]):
                ax.text(j, i, f"{m[i, j]:.2f}", ha="center", va="center", fontsize=7,
                        color="white" if m[i, j] < 0.5 else "black")
    fig.tight_layout()
    _save(fig, path)


def projection_scatter(points: np.ndarray, labels: np.ndarray, class_names: Sequence[str], path: str):
    """2-D scatterplot of projected features coloured by class."""
    fig, ax = plt.subplots(figsize=(6.0, 5.0))
    cmap = plt.get_cmap("tab10")
    for c, name in enumerate(class_names):
        sel = labels == c
        if not np.any(sel):
            continue
        ax.scatter(points[sel, 0], points[sel, 1], s=8, color=cmap(c % 10), label=name)
    ax.set_xlabel("component 1")
    ax.set_ylabel("component 2")
    if len(class_names):
        ax.legend(fontsize=7, markerscale=2)
    fig.tight_layout()
    _save(fig, path)


def segment_plot(segment: np.ndarray, channel_names: Sequence[str], title: str, path: str):
    """Channels (rows of a D x T segment) against timestamp index."""
    fig, ax = plt.subplots(figsize=(6.0, 3.5))
    steps = np.arange(segment.shape[1])
    for row, name in zip(segment, channel_names):
        ax.plot(steps, row, linewidth=1.0, label=name)
    ax.set_title(title, fontsize=10)
    ax.set_xlabel("timestamp")
    ax.legend(fontsize=7, ncol=2)
    fig.tight_layout()
    _save(fig, path)
