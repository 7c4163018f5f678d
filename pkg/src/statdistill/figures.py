"""Rendered run summaries: training curves, ablation comparisons, and a
2-D projection of exported features. All output goes to files (Agg)."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np


def _ensure_parent(path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    return path


def save_training_curves(history, path) -> None:
    """Loss components and evaluation metrics against the epoch index."""
    path = _ensure_parent(path)
    epochs = [r["epoch"] for r in history]
    fig, (ax_loss, ax_metric) = plt.subplots(1, 2, figsize=(10, 3.8))

    for key, label in (("total", "total"), ("l_ce", "cross-entropy"),
                       ("l_sm", "stats match"), ("l_adain", "adain"),
                       ("l_baseline", "baseline")):
        values = [r.get(key, 0.0) for r in history]
        if any(v != 0.0 for v in values) or key == "total":
            ax_loss.plot(epochs, values, marker="o", markersize=3, label=label)
    ax_loss.set_xlabel("epoch")
    ax_loss.set_ylabel("training loss")
    ax_loss.legend(fontsize=8)
    ax_loss.grid(alpha=0.3)

    ax_metric.plot(epochs, [r["top1"] for r in history],
                   marker="o", markersize=3, label="top-1")
    ax_metric.plot(epochs, [r["nmi"] for r in history],
                   marker="s", markersize=3, label="nmi")
    ax_metric.set_xlabel("epoch")
    ax_metric.set_ylabel("fraction")
    ax_metric.set_ylim(0, 1.05)
    twin = ax_metric.twinx()
    twin.plot(epochs, [r["stats_distance"] for r in history],
              color="tab:red", linestyle="--", label="stats distance")
    twin.set_ylabel("stats distance", color="tab:red")
    ax_metric.legend(loc="lower right", fontsize=8)
    ax_metric.grid(alpha=0.3)

    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def save_comparison_bars(rows, path) -> None:
    """Final stats distance and top-1 per named run, side by side.

    ``rows`` is a list of (name, final_record) pairs.
    """
    path = _ensure_parent(path)
    names = [name for name, _ in rows]
    fig, (ax_dist, ax_acc) = plt.subplots(1, 2, figsize=(10, 3.8))
    x = np.arange(len(names))

    ax_dist.bar(x, [r["stats_distance"] for _, r in rows], color="tab:red")
    ax_dist.set_xticks(x, names, rotation=20, ha="right", fontsize=8)
    ax_dist.set_ylabel("stats distance")
    ax_dist.grid(alpha=0.3, axis="y")

    ax_acc.bar(x, [r["top1"] for _, r in rows], color="tab:blue")
    ax_acc.set_xticks(x, names, rotation=20, ha="right", fontsize=8)
    ax_acc.set_ylabel("top-1")
    ax_acc.set_ylim(0, 1.05)
    ax_acc.grid(alpha=0.3, axis="y")

    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def save_feature_scatter(features, labels, path) -> None:
    """Scatter of the two leading principal components, colored by label."""
    path = _ensure_parent(path)
    x = np.asarray(features, dtype=np.float64)
    x = x - x.mean(axis=0, keepdims=True)
    _, _, vt = np.linalg.svd(x, full_matrices=False)
    projected = x @ vt[:2].T

    fig, ax = plt.subplots(figsize=(4.5, 4))
    scatter = ax.scatter(projected[:, 0], projected[:, 1],
                         c=np.asarray(labels), cmap="tab10", s=12, alpha=0.8)
    ax.set_xlabel("pc 1")
    ax.set_ylabel("pc 2")
    fig.colorbar(scatter, ax=ax, label="class")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
