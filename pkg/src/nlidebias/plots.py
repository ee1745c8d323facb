"""Figure rendering for the report paths.

Every report command writes its delimited output (JSON/CSV) and, next to
it, a matplotlib PNG of the same data: training loss curves, per-example
attention heatmaps, swap-robustness curves and the evaluation confusion
matrix. Rendering is headless (Agg).
"""

from __future__ import annotations

import json

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .corpus import LABELS


def plot_loss_curves(metrics_path, out_path) -> None:
    """Line plot of every loss component against the step index."""
    steps, series = [], {"l_main": [], "l_er": [], "l_sa_sum": [], "l_si_sum": [], "total": []}
    with open(metrics_path, encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            row = json.loads(line)
            steps.append(row["step"])
            for key in series:
                series[key].append(row[key])
    fig, ax = plt.subplots(figsize=(7, 4.2))
    for key, values in series.items():
        ax.plot(steps, values, label=key, linewidth=1.2)
    ax.set_xlabel("step")
    ax.set_ylabel("loss")
    ax.legend(fontsize=8)
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(out_path, dpi=120)
    plt.close(fig)


def plot_attention_heatmap(report: dict, out_path, max_examples: int = 8) -> None:
    """One heatmap row per block, one panel per example, tokens on the x axis."""
    examples = report["examples"][:max_examples]
    if not examples:
        raise ValueError("attention report has no examples to plot")
    blocks = report["blocks"]
    fig, axes = plt.subplots(
        len(examples), 1, figsize=(10, 1.1 * len(blocks) * len(examples) / 2 + 1.5),
        squeeze=False,
    )
    for ax, ex in zip(axes[:, 0], examples):
        grid = np.array([ex["attention"][str(h)] for h in blocks])
        im = ax.imshow(grid, aspect="auto", cmap="viridis")
        ax.set_yticks(range(len(blocks)), [f"block {h}" for h in blocks], fontsize=7)
        ax.set_xticks(range(len(ex["tokens"])), ex["tokens"], rotation=60, fontsize=6, ha="right")
        ax.set_title(f"gold: {ex['gold']}", fontsize=8)
        fig.colorbar(im, ax=ax, fraction=0.025)
    fig.tight_layout()
    fig.savefig(out_path, dpi=120)
    plt.close(fig)


def plot_swap_curves(curves: dict[str, list[float]], out_path) -> None:
    """Accuracy per replacement round for each word category."""
    fig, ax = plt.subplots(figsize=(6, 4))
    for category in sorted(curves):
        values = curves[category]
        ax.plot(range(1, len(values) + 1), values, marker="o", label=category)
    ax.set_xlabel("replacement round")
    ax.set_ylabel("accuracy")
    ax.set_ylim(0.0, 1.02)
    ax.legend(fontsize=8)
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(out_path, dpi=120)
    plt.close(fig)


def plot_confusion(confusion, out_path) -> None:
    """Gold-by-predicted counts of the three relation labels."""
    arr = np.asarray(confusion, dtype=float)
    fig, ax = plt.subplots(figsize=(4.2, 3.6))
    im = ax.imshow(arr, cmap="Blues")
    ax.set_xticks(range(3), LABELS, rotation=30, ha="right", fontsize=8)
    ax.set_yticks(range(3), LABELS, fontsize=8)
    ax.set_xlabel("predicted")
    ax.set_ylabel("gold")
    for i in range(3):
        for j in range(3):
            ax.text(j, i, int(arr[i, j]), ha="center", va="center", fontsize=8,
                    color="white" if arr[i, j] > arr.max() / 2 else "black")
    fig.colorbar(im, ax=ax, fraction=0.046)
    fig.tight_layout()
    fig.savefig(out_path, dpi=120)
    plt.close(fig)
