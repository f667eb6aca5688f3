"""Figures written to files (Agg backend; nothing is displayed)."""
from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .study import PREFERENCE_CATEGORIES  # noqa: E402

_PREF_LABELS = ["Strongly favors DL", "Favors DL", "Indifferent", "Favors CS", "Strongly favors CS"]
_PREF_COLORS = ["#1b7837", "#7fbf7b", "#bababa", "#af8dc3", "#762a83"]


def preference_bar_chart(tallies, path, title="Reader preference"):
    """Grouped bars: one group per reader, one bar per preference category."""
    readers = [t.reader_id for t in tallies]
    x = np.arange(len(readers))
    width = 0.8 / len(PREFERENCE_CATEGORIES)
    fig, ax = plt.subplots(figsize=(1.6 + 1.6 * len(readers), 3.6))
    for i, (cat, label, color) in enumerate(zip(PREFERENCE_CATEGORIES, _PREF_LABELS, _PREF_COLORS)):
        counts = [t.counts[cat] for t in tallies]
        bars = ax.bar(x + (i - 2) * width, counts, width, label=label, color=color)
        ax.bar_label(bars, fontsize=7)
    ax.set_xticks(x, [f"Reader {r}" for r in readers])
    ax.set_ylabel("Cases")
    ax.set_title(title)
    ax.legend(fontsize=7, frameon=False)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path


def save_image(array, path, title=None, cmap="gray"):
    """One 2-D array as a PNG with a colorbar."""
    fig, ax = plt.subplots(figsize=(4, 4))
    im = ax.imshow(np.asarray(array), cmap=cmap)
    ax.set_axis_off()
    if title:
        ax.set_title(title)
    fig.colorbar(im, ax=ax, fraction=0.046)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def save_slice_panel(images: dict, path, slice_index=None):
    """Side-by-side magnitude slices (e.g. target, zero-filled, CS, DL) on a shared scale."""
    names = list(images)
    arrays = [np.asarray(images[n]) for n in names]
    if arrays[0].ndim == 3:
        z = arrays[0].shape[0] // 2 if slice_index is None else slice_index
        arrays = [a[z] for a in arrays]
    vmax = max(float(a.max()) for a in arrays) or 1.0
    fig, axes = plt.subplots(1, len(arrays), figsize=(3 * len(arrays), 3.2), squeeze=False)
    for ax, name, a in zip(axes[0], names, arrays):
        ax.imshow(a, cmap="gray", vmin=0, vmax=vmax)
        ax.set_title(name)
        ax.set_axis_off()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def training_curve(history, path):
    epochs = [r["epoch"] for r in history]
    fig, ax = plt.subplots(figsize=(5, 3.2))
    ax.plot(epochs, [r["train_loss"] for r in history], label="train")
    ax.plot(epochs, [r["val_loss"] for r in history], label="validation")
    ax.set_xlabel("Epoch")
    ax.set_ylabel("1 - SSIM")
    ax.legend(frameon=False)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path
