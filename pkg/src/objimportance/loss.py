"""Binary cross entropy with hard negative mining."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

EPS = 1e-12


@dataclass
class LossBreakdown:
    total: float
    node_losses: np.ndarray
    selected_negative_indices: np.ndarray
    positive_indices: np.ndarray
    n_pos: int
    n_neg: int
    d_scores: np.ndarray  # d total / d score, zero outside the mined set


def bce(x, x_hat):
    x_hat = np.clip(x_hat, EPS, 1.0 - EPS)
    return -x * np.log(x_hat) - (1 - x) * np.log(1.0 - x_hat)


def bce_grad(x, x_hat):
    """Derivative in ``x_hat``; zero where the clamp is active."""
    inside = (x_hat >= EPS) & (x_hat <= 1.0 - EPS)
    xc = np.clip(x_hat, EPS, 1.0 - EPS)
    return np.where(inside, -x / xc + (1 - x) / (1.0 - xc), 0.0)


def n_neg_quota(n_pos: int) -> int:
    if n_pos < 0:
        raise ValueError("n_pos must be non-negative")
    return max(5 * n_pos, 10)


def mined_loss(scores: np.ndarray, labels: np.ndarray) -> LossBreakdown:
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    if scores.shape != labels.shape or scores.ndim != 1:
        raise ValueError(f"scores {scores.shape} and labels {labels.shape} must be equal-length vectors")
    node = bce(labels, scores)
    pos = np.flatnonzero(labels == 1)
    neg = np.flatnonzero(labels == 0)
    n_pos = len(pos)
    # stable sort on -loss keeps lower indices first among equal losses
    order = np.argsort(-node[neg], kind="stable")
    selected = np.sort(neg[order[: min(n_neg_quota(n_pos), len(neg))]])
    divisor = max(n_pos, 1)
    # fixed summation order: positives then selected negatives, each by index
    total = (node[pos].sum() + node[selected].sum()) / divisor
    d_scores = np.zeros_like(scores)
    mined = np.concatenate([pos, selected])
    d_scores[mined] = bce_grad(labels[mined], scores[mined]) / divisor
    return LossBreakdown(
        total=float(total),
        node_losses=node,
        selected_negative_indices=selected,
        positive_indices=pos,
        n_pos=n_pos,
        n_neg=len(selected),
        d_scores=d_scores,
    )
