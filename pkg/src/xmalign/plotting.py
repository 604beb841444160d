"""Matplotlib figures written next to the delimited outputs."""

import io
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .ioutil import atomic_write_bytes  # noqa: E402

# no software/date stamps, so identical inputs give identical files
_PNG_META = {"Software": None}


def _save(fig, path):
    buf = io.BytesIO()
    fig.savefig(buf, format="png", dpi=100, metadata=_PNG_META)
    plt.close(fig)
    atomic_write_bytes(Path(path), buf.getvalue())


def plot_training_curves(log, path, title="training"):
    fig, ax = plt.subplots(figsize=(6, 4))
    epochs = np.arange(1, len(log.losses) + 1)
    ax.plot(epochs, log.losses, label="train loss")
    ax.set_xlabel("epoch")
    ax.set_ylabel("loss")
    if log.val_metric:
        twin = ax.twinx()
        twin.plot(epochs, log.val_metric, color="tab:orange", label="validation")
        twin.set_ylabel("validation")
    if log.best_epoch >= 0:
        ax.axvline(log.best_epoch + 1, color="grey", linestyle=":")
    ax.set_title(title)
    fig.tight_layout()
    _save(fig, path)


def plot_projection(projection, labels, path, title="gap projection"):
    fig, ax = plt.subplots(figsize=(5, 5))
    n = len(labels)
    for start, marker, name in ((0, "o", "visual"), (n, "x", "audio")):
        xy = projection.coords[start:start + n]
        ax.scatter(xy[:, 0], xy[:, 1], c=labels, cmap="tab10", marker=marker, s=18, label=name, vmin=0, vmax=9)
    ax.legend(loc="best")
    ax.set_xlabel("PC1")
    ax.set_ylabel("PC2")
    ax.set_title(title)
    fig.tight_layout()
    _save(fig, path)


def plot_saliency(weights, masks, path):
    weights = np.atleast_2d(weights)
    masks = np.atleast_2d(masks)
    fig, axes = plt.subplots(2, 1, figsize=(7, 4), sharex=True)
    axes[0].imshow(weights, aspect="auto", cmap="magma")
    axes[0].set_ylabel("clip")
    axes[0].set_title("temporal saliency")
    axes[1].imshow(masks.astype(float), aspect="auto", cmap="Greys")
    axes[1].set_ylabel("clip")
    axes[1].set_xlabel("timestep")
    axes[1].set_title("event mask")
    fig.tight_layout()
    _save(fig, path)


def plot_bars(names, values, path, ylabel, title=""):
    fig, ax = plt.subplots(figsize=(max(4, 0.8 * len(names) + 2), 4))
    ax.bar(range(len(names)), values, color="tab:blue")
    ax.set_xticks(range(len(names)))
    ax.set_xticklabels(names, rotation=30, ha="right", fontsize=8)
    ax.set_ylabel(ylabel)
    ax.set_ylim(0, 1.05 if max(values, default=0) <= 1 else None)
    ax.set_title(title)
    fig.tight_layout()
    _save(fig, path)
