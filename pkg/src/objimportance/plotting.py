"""Static figures: training loss curves, per-fold PR curves and edge-matrix heatmaps.

Figures are built on the Agg canvas without touching pyplot state, and PNGs are
written without a software/version stamp so identical inputs give identical bytes.
"""
from __future__ import annotations

from pathlib import Path
from typing import Sequence

import numpy as np
from matplotlib.backends.backend_agg import FigureCanvasAgg
from matplotlib.figure import Figure

PNG_METADATA = {"Software": None}
DPI = 80


def _save(fig: Figure, path: str | Path) -> Path:
    FigureCanvasAgg(fig)
    fig.savefig(path, format="png", dpi=DPI, metadata=PNG_METADATA)
    return Path(path)


def loss_curves(records: Sequence[dict], path: str | Path) -> Path:
    """``records`` hold ``{"fold", "epoch", "loss"}``; one line per fold."""
    if not records:
        raise ValueError("training log is empty")
    fig = Figure(figsize=(5, 3.5))
    ax = fig.add_subplot()
    for fold in sorted({r["fold"] for r in records}):
        rows = sorted((r["epoch"], r["loss"]) for r in records if r["fold"] == fold)
        ax.plot([e for e, _ in rows], [l for _, l in rows], marker=".", label=f"fold {fold}")
    ax.set_xlabel("epoch")
    ax.set_ylabel("mean mined loss")
    ax.legend()
    fig.tight_layout()
    return _save(fig, path)


def pr_curves(folds: Sequence[dict], path: str | Path) -> Path:
    """``folds`` hold ``{"fold", "ap", "recall", "precision"}``; one curve per fold."""
    if not folds:
        raise ValueError("no fold metrics to plot")
    fig = Figure(figsize=(4.5, 4))
    ax = fig.add_subplot()
    for f in folds:
        ax.step(f["recall"], f["precision"], where="post", label=f"fold {f['fold']} AP={100 * f['ap']:.1f}")
    ax.set_xlim(0, 1.02)
    ax.set_ylim(0, 1.02)
    ax.set_xlabel("recall")
    ax.set_ylabel("precision")
    ax.legend(loc="lower left")
    fig.tight_layout()
    return _save(fig, path)


def edge_heatmap(e: np.ndarray, path: str | Path, title: str = "edge matrix") -> Path:
    e = np.asarray(e, dtype=np.float64)
    if e.ndim != 2 or e.shape[0] != e.shape[1]:
        raise ValueError(f"edge matrix must be square, got shape {e.shape}")
    fig = Figure(figsize=(4.5, 4))
    ax = fig.add_subplot()
    im = ax.imshow(e, cmap="viridis", interpolation="nearest")
    fig.colorbar(im, ax=ax)
    ax.set_title(title)
    ax.set_xlabel("source node j")
    ax.set_ylabel("target node i")
    fig.tight_layout()
    return _save(fig, path)
