"""Boxes, proposal padding and the pooling ops that turn a feature grid into node vectors.

Grids are ``(T, H, W, C)`` float64 arrays. Boxes are normalized ``(x1, y1, x2, y2)``
with x along the width axis and y along the height axis.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np


@dataclass(frozen=True)
class BBox:
    x1: float
    y1: float
    x2: float
    y2: float

    def __post_init__(self):
        vals = (self.x1, self.y1, self.x2, self.y2)
        if not all(math.isfinite(v) for v in vals):
            raise ValueError(f"non-finite box coordinates {vals}")
        if not (0.0 <= self.x1 < self.x2 <= 1.0 and 0.0 <= self.y1 < self.y2 <= 1.0):
            raise ValueError(f"degenerate or out-of-range box {vals}")

    @property
    def area(self) -> float:
        return (self.x2 - self.x1) * (self.y2 - self.y1)

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.x1, self.y1, self.x2, self.y2)


# hood of the ego car; used to pad every frame to the same proposal count
DUMMY_BOX = BBox(0.07, 0.91, 0.97, 1.0)


@dataclass(frozen=True)
class Proposal:
    box: BBox
    is_dummy: bool = False
    label: int = 0

    def __post_init__(self):
        if self.label not in (0, 1):
            raise ValueError(f"label must be 0 or 1, got {self.label}")
        if self.is_dummy and (self.box != DUMMY_BOX or self.label != 0):
            raise ValueError("dummy proposals carry the dummy box and label 0")


def dummy_proposal() -> Proposal:
    return Proposal(DUMMY_BOX, is_dummy=True, label=0)


def iou(a: BBox, b: BBox) -> float:
    iw = min(a.x2, b.x2) - max(a.x1, b.x1)
    ih = min(a.y2, b.y2) - max(a.y1, b.y1)
    if iw <= 0.0 or ih <= 0.0:
        return 0.0
    inter = iw * ih
    return inter / (a.area + b.area - inter)


def truncate_by_score(props: Sequence[Proposal], scores: Sequence[float], n_target: int) -> list[Proposal]:
    """Keep the ``n_target`` highest-scoring detections, preserving their original order."""
    if len(props) != len(scores):
        raise ValueError("one detector score per proposal required")
    if len(props) <= n_target:
        return list(props)
    order = sorted(range(len(props)), key=lambda i: (-scores[i], i))[:n_target]
    return [props[i] for i in sorted(order)]


def pad_proposals(props: Sequence[Proposal], n_target: int) -> list[Proposal]:
    if len(props) > n_target:
        raise ValueError(
            f"{len(props)} proposals exceed n_target={n_target}; "
            "truncate by detector score first (see truncate_by_score)"
        )
    return list(props) + [dummy_proposal() for _ in range(n_target - len(props))]


def check_grid(grid: np.ndarray) -> np.ndarray:
    grid = np.asarray(grid, dtype=np.float64)
    if grid.ndim != 4 or min(grid.shape) < 1:
        raise ValueError(f"feature grid must be T x H x W x C, got shape {grid.shape}")
    if not np.all(np.isfinite(grid)):
        raise ValueError("feature grid contains non-finite values")
    return grid


# -- temporal aggregation ---------------------------------------------------

def temporal_aggregate(grid: np.ndarray, w: np.ndarray) -> np.ndarray:
    """Convolve along time only, kernel ``T x 1 x 1 x C_in x C_out``, stride T.

    Returns a ``1 x H x W x C_out`` grid.
    """
    T, H, W, C = grid.shape
    if w.ndim != 5 or w.shape[0] != T or w.shape[1:3] != (1, 1) or w.shape[3] != C:
        raise ValueError(f"temporal kernel {w.shape} incompatible with grid {grid.shape}")
    out = np.einsum("thwc,tcd->hwd", grid, w[:, 0, 0])
    return out[None]


def temporal_aggregate_backward(dout: np.ndarray, grid: np.ndarray, w: np.ndarray):
    """Gradients ``(d_grid, d_w)`` given ``dout`` of shape ``1 x H x W x C_out``."""
    d = dout[0]
    dgrid = np.einsum("hwd,tcd->thwc", d, w[:, 0, 0])
    dw = np.einsum("thwc,hwd->tcd", grid, d)[:, None, None]
    return dgrid, dw


# -- ROI pooling --------------------------------------------------------------

def _bin_edges(lo: float, hi: float, r: int, size: int) -> list[tuple[int, int]]:
    span = hi - lo
    edges = []
    for k in range(r):
        start = math.floor(lo + k * span / r)
        end = math.ceil(lo + (k + 1) * span / r) - 1
        start = min(max(start, 0), size - 1)
        end = min(max(end, start), size - 1)
        edges.append((start, end))
    return edges


def roi_bins(box: BBox, H: int, W: int, r: int) -> list[list[tuple[int, int, int, int]]]:
    """Inclusive cell ranges ``(row0, row1, col0, col1)`` for each of the r x r bins."""
    if r < 1:
        raise ValueError("pooled size r must be >= 1")
    rows = _bin_edges(box.y1 * H, box.y2 * H, r, H)
    cols = _bin_edges(box.x1 * W, box.x2 * W, r, W)
    return [[(r0, r1, c0, c1) for (c0, c1) in cols] for (r0, r1) in rows]


def roi_pool(grid: np.ndarray, box: BBox, r: int) -> tuple[np.ndarray, np.ndarray]:
    """Quantized ROI max pooling of a ``T=1`` grid.

    Returns the ``r x r x C`` pooled tensor and, per output entry, the linear
    cell index (``row * W + col``) of the max. Ties go to the lowest index.
    """
    if grid.shape[0] != 1:
        raise ValueError("roi_pool expects a temporally aggregated grid (T=1)")
    _, H, W, C = grid.shape
    flat = grid[0].reshape(H * W, C)
    out = np.empty((r, r, C))
    arg = np.empty((r, r, C), dtype=np.int64)
    for i, row in enumerate(roi_bins(box, H, W, r)):
        for j, (r0, r1, c0, c1) in enumerate(row):
            cells = (np.arange(r0, r1 + 1)[:, None] * W + np.arange(c0, c1 + 1)[None, :]).ravel()
            vals = flat[cells]
            k = np.argmax(vals, axis=0)
            out[i, j] = vals[k, np.arange(C)]
            arg[i, j] = cells[k]
    return out, arg


def roi_pool_backward(dout: np.ndarray, argmax: np.ndarray, grid_shape: tuple[int, ...]) -> np.ndarray:
    _, H, W, C = grid_shape
    dflat = np.zeros((H * W, C))
    chans = np.broadcast_to(np.arange(C), argmax.shape)
    np.add.at(dflat, (argmax.ravel(), chans.ravel()), dout.ravel())
    return dflat.reshape(1, H, W, C)


def spatial_max_pool(f: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Channel-wise max over the r x r positions; returns ``(vector, flat position argmax)``."""
    r1, r2, C = f.shape
    flat = f.reshape(r1 * r2, C)
    arg = np.argmax(flat, axis=0)
    return flat[arg, np.arange(C)], arg


def spatial_max_pool_backward(dv: np.ndarray, argmax: np.ndarray, shape: tuple[int, int, int]) -> np.ndarray:
    r1, r2, C = shape
    d = np.zeros((r1 * r2, C))
    d[argmax, np.arange(C)] = dv
    return d.reshape(shape)


def proposal_cells(box: BBox, H: int, W: int, r: int) -> np.ndarray:
    """Sorted linear indices of every cell touched by any ROI bin of ``box``.

    ``max`` over these cells equals ``spatial_max_pool(roi_pool(...))``, which is
    what the batched model uses to compute node vectors in one gather.
    """
    cells = set()
    for row in roi_bins(box, H, W, r):
        for r0, r1, c0, c1 in row:
            for y in range(r0, r1 + 1):
                cells.update(range(y * W + c0, y * W + c1 + 1))
    return np.array(sorted(cells), dtype=np.int64)


def global_avg_pool(grid: np.ndarray) -> np.ndarray:
    return grid.mean(axis=(0, 1, 2))


def global_avg_pool_backward(dd: np.ndarray, grid_shape: tuple[int, ...]) -> np.ndarray:
    T, H, W, C = grid_shape
    return np.broadcast_to(dd / (T * H * W), grid_shape).copy()
