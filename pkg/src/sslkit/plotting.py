"""Figures written next to the CSV outputs of the CLI."""

from __future__ import annotations

import os
from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

STYLE = {
    "font.size": 9,
    "axes.labelsize": 9,
    "axes.titlesize": 10,
    "legend.fontsize": 8,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "savefig.dpi": 120,
}


def _save(fig, path):
    fig.tight_layout()
    fig.savefig(os.fspath(path))
    plt.close(fig)


def plot_training_curves(rows, path, title: str = "") -> None:
    """Loss and online probe accuracy against epoch."""
    epochs = [r.epoch for r in rows]
    with plt.rc_context(STYLE):
        fig, (ax_loss, ax_acc) = plt.subplots(1, 2, figsize=(7, 2.8))
        ax_loss.plot(epochs, [r.loss for r in rows], marker="o", color="k", lw=1)
        ax_loss.set_xlabel("epoch")
        ax_loss.set_ylabel("train loss")
        ax_acc.plot(epochs, [r.top1 for r in rows], marker="o", lw=1, label="top-1")
        ax_acc.plot(epochs, [r.top5 for r in rows], marker="s", lw=1, label="top-5")
        ax_acc.set_xlabel("epoch")
        ax_acc.set_ylabel("online probe accuracy (%)")
        ax_acc.set_ylim(0, 100)
        ax_acc.legend(frameon=False)
        if title:
            fig.suptitle(title)
        _save(fig, path)


def plot_projection(points: np.ndarray, labels: Sequence[int], path, title: str = "") -> None:
    labels = np.asarray(labels)
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(4, 4))
        cmap = plt.get_cmap("tab10" if labels.max(initial=0) < 10 else "tab20")
        for c in np.unique(labels):
            m = labels == c
            ax.scatter(points[m, 0], points[m, 1], s=4, color=cmap(int(c) % cmap.N), label=str(c), alpha=0.7)
        ax.set_xlabel("PC 1")
        ax.set_ylabel("PC 2")
        if len(np.unique(labels)) <= 20:
            ax.legend(markerscale=3, frameon=False, fontsize=6, loc="best")
        if title:
            ax.set_title(title)
        _save(fig, path)


def plot_benchmark(rows, path) -> None:
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(4.5, 2.8))
        names = [r.label for r in rows]
        rates = [r.imgs_per_sec for r in rows]
        bars = ax.bar(names, rates, color=["0.6"] + ["C0"] * (len(rows) - 1))
        for bar, r in zip(bars, rows):
            if r.pipelined:
                ax.annotate(f"{r.speedup_pct:+.0f}%", (bar.get_x() + bar.get_width() / 2, bar.get_height()),
                            ha="center", va="bottom", fontsize=7)
        ax.set_ylabel("images / s")
        _save(fig, path)
