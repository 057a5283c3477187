"""Global-context fusion and the shared per-node scoring MLP."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class MlpParams:
    weights: list[np.ndarray]
    biases: list[np.ndarray]

    def __post_init__(self):
        if len(self.weights) != len(self.biases) or not self.weights:
            raise ValueError("need one bias per weight matrix")
        for k, (w, b) in enumerate(zip(self.weights, self.biases)):
            if b.shape != (w.shape[1],):
                raise ValueError(f"layer {k}: bias {b.shape} does not match weight {w.shape}")
            if k and w.shape[0] != self.weights[k - 1].shape[1]:
                raise ValueError(f"layer {k}: input dim {w.shape[0]} != previous output {self.weights[k - 1].shape[1]}")
        if self.weights[-1].shape[1] != 1:
            raise ValueError("final MLP layer must produce one logit")

    @property
    def in_dim(self) -> int:
        return self.weights[0].shape[0]


def fuse_global(u: np.ndarray, d: np.ndarray) -> np.ndarray:
    """Tile descriptor ``d`` over the nodes and append it after each row of ``u``."""
    if d.ndim != u.ndim - 1 or d.shape[:-1] != u.shape[:-2]:
        raise ValueError(f"descriptor {d.shape} does not match node features {u.shape}")
    tiled = np.broadcast_to(d[..., None, :], u.shape[:-1] + d.shape[-1:])
    return np.concatenate([u, tiled], axis=-1)


def sigmoid(x: np.ndarray) -> np.ndarray:
    # split by sign so neither branch overflows
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def mlp_forward(y: np.ndarray, m: MlpParams):
    """Returns ``(logits, activations)``; activations are the inputs of each layer."""
    if y.shape[-1] != m.in_dim:
        raise ValueError(f"MLP expects {m.in_dim} input features, got {y.shape[-1]}")
    acts = [y]
    h = y
    last = len(m.weights) - 1
    for k, (w, b) in enumerate(zip(m.weights, m.biases)):
        h = h @ w + b
        if k < last:
            h = np.maximum(h, 0.0)
            acts.append(h)
    return h[..., 0], acts


def score_nodes(y: np.ndarray, m: MlpParams) -> np.ndarray:
    logits, _ = mlp_forward(y, m)
    return sigmoid(logits)


def mlp_backward(d_logits: np.ndarray, acts: list[np.ndarray], m: MlpParams):
    """Returns ``(d_y, d_weights, d_biases)``."""
    dh = d_logits[..., None]
    dws, dbs = [None] * len(m.weights), [None] * len(m.weights)
    for k in reversed(range(len(m.weights))):
        a = acts[k]
        flat_a = a.reshape(-1, a.shape[-1])
        flat_d = dh.reshape(-1, dh.shape[-1])
        dws[k] = flat_a.T @ flat_d
        dbs[k] = flat_d.sum(axis=0)
        dh = dh @ m.weights[k].T
        if k > 0:
            dh = dh * (a > 0)
    return dh, dws, dbs
