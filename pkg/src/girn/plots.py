"""Figures written next to the CSV/JSON reports."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def _save(fig, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.tight_layout()
    # no timestamp in the PNG metadata, so reruns produce identical files
    fig.savefig(path, dpi=120, metadata={"Software": None})
    plt.close(fig)
    return path


def confusion_figure(cm, path, title: str = "Group activity confusion") -> Path:
    rates = cm.rates()
    n = len(cm.class_names)
    fig, ax = plt.subplots(figsize=(1.0 + 0.8 * n, 0.8 + 0.7 * n))
    im = ax.imshow(rates, vmin=0.0, vmax=1.0, cmap="Blues")
    ax.set_xticks(range(n), cm.class_names, rotation=45, ha="right")
    ax.set_yticks(range(n), cm.class_names)
    ax.set_xlabel("predicted")
    ax.set_ylabel("ground truth")
    for i in range(n):
        for j in range(n):
            ax.text(j, i, f"{100 * rates[i, j]:.0f}", ha="center", va="center", fontsize=8,
                    color="white" if rates[i, j] > 0.5 else "black")
    ax.set_title(title)
    fig.colorbar(im, ax=ax, fraction=0.046)
    return _save(fig, path)


def sweep_figure(rows, path) -> Path:
    """Mean accuracy (with per-repetition spread) against noise level, one panel per kind."""
    kinds = sorted({r.spec.kind for r in rows})
    fig, axes = plt.subplots(1, len(kinds), figsize=(4.5 * len(kinds), 3.4), squeeze=False)
    for ax, kind in zip(axes[0], kinds):
        sel = [r for r in rows if r.spec.kind == kind]
        x = np.array([r.spec.value for r in sel])
        mean = np.array([r.mean_accuracy for r in sel])
        lo = np.array([min(r.accuracies) for r in sel])
        hi = np.array([max(r.accuracies) for r in sel])
        ax.fill_between(x, lo, hi, alpha=0.25)
        ax.plot(x, mean, marker="o")
        ax.set_xlabel("std (px)" if kind == "displacement" else "dropout chance")
        ax.set_ylabel("accuracy")
        ax.set_title(f"ball {kind} noise")
        ax.grid(alpha=0.3)
    return _save(fig, path)


def grid_figure(table: dict, strategies, joints, path) -> Path:
    """Heatmap of the connectivity x joint-subset grid; skipped cells are grey."""
    data = np.full((len(strategies), len(joints)), np.nan)
    for i, s in enumerate(strategies):
        for j, k in enumerate(joints):
            v = table.get((s, k))
            if v is not None:
                data[i, j] = v
    fig, ax = plt.subplots(figsize=(1.2 + 1.0 * len(joints), 1.0 + 0.7 * len(strategies)))
    ax.set_facecolor("0.85")
    im = ax.imshow(np.ma.masked_invalid(data), cmap="viridis", vmin=0.0, vmax=1.0)
    ax.set_xticks(range(len(joints)), [f"{k}-joints" for k in joints])
    ax.set_yticks(range(len(strategies)), [s.capitalize() for s in strategies])
    for i in range(len(strategies)):
        for j in range(len(joints)):
            txt = "-" if np.isnan(data[i, j]) else f"{100 * data[i, j]:.1f}"
            ax.text(j, i, txt, ha="center", va="center", fontsize=8, color="white")
    ax.set_title("inter-person accuracy")
    fig.colorbar(im, ax=ax, fraction=0.046)
    return _save(fig, path)


def ablation_figure(table: dict, rows, columns, path) -> Path:
    """Grouped bars: one group per relation subset, one bar per component column."""
    fig, ax = plt.subplots(figsize=(1.5 + 1.4 * len(rows), 3.4))
    width = 0.8 / len(columns)
    x = np.arange(len(rows))
    for j, col in enumerate(columns):
        vals = [table[(r, col)] for r in rows]
        ax.bar(x + (j - (len(columns) - 1) / 2) * width, vals, width, label=col)
    ax.set_xticks(x, rows)
    ax.set_ylim(0, 1)
    ax.set_ylabel("accuracy")
    ax.legend(fontsize=8)
    ax.grid(axis="y", alpha=0.3)
    return _save(fig, path)
