"""End-to-end forward pass, reverse-mode gradients, and parameter initialization.

Everything runs batched: grids ``(B, T, H, W, C)``, node tensors ``(B, N, C)``.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from typing import Sequence

import numpy as np

from . import geometry
from .config import RunConfig
from .graph import EdgeParams, GcnTape, gcn_backward, gcn_forward
from .head import MlpParams, fuse_global, mlp_backward, mlp_forward, sigmoid
from .loss import LossBreakdown, mined_loss

ModelParams = dict  # name -> float64 array, insertion ordered


def param_shapes(cfg: RunConfig) -> dict[str, tuple[int, ...]]:
    C, d = cfg.channels, cfg.d
    shapes = {
        "temporal_conv": (cfg.frames, 1, 1, C, C),
        "edge.gamma": (C, d),
        "edge.gamma_prime": (C, d),
        "edge.phi": (2 * d,),
    }
    for k in range(1, 4):
        shapes[f"gcn.w{k}"] = (C, C)
    dims = (cfg.mlp_in,) + cfg.mlp_hidden + (1,)
    for k in range(len(dims) - 1):
        shapes[f"mlp.w{k + 1}"] = (dims[k], dims[k + 1])
        shapes[f"mlp.b{k + 1}"] = (dims[k + 1],)
    return shapes


def _fans(name: str, shape: tuple[int, ...]) -> tuple[int, int]:
    if name == "temporal_conv":
        rf = shape[0] * shape[1] * shape[2]
        return rf * shape[3], rf * shape[4]
    if name == "edge.phi":
        return shape[0], 1
    return shape[0], shape[1]


def init_params(cfg: RunConfig, seed: int | None = None) -> ModelParams:
    """Glorot-uniform matrices and zero biases from a seeded generator."""
    rng = np.random.default_rng(cfg.seed if seed is None else seed)
    params = {}
    for name, shape in param_shapes(cfg).items():
        if ".b" in name or (cfg.mlp_init == "zeros" and name.startswith("mlp.")):
            params[name] = np.zeros(shape)
            continue
        fan_in, fan_out = _fans(name, shape)
        s = np.sqrt(6.0 / (fan_in + fan_out))
        params[name] = rng.uniform(-s, s, size=shape)
    return params


def check_params(params: ModelParams, cfg: RunConfig) -> None:
    expected = param_shapes(cfg)
    if list(params) != list(expected):
        raise ValueError(f"parameter names {list(params)} do not match configuration {list(expected)}")
    for name, shape in expected.items():
        if params[name].shape != shape:
            raise ValueError(f"parameter {name}: shape {params[name].shape}, configuration needs {shape}")


def edge_params(params: ModelParams) -> EdgeParams:
    return EdgeParams(params["edge.gamma"], params["edge.gamma_prime"], params["edge.phi"])


def gcn_weights(params: ModelParams) -> list[np.ndarray]:
    return [params[f"gcn.w{k}"] for k in range(1, 4)]


def mlp_params(params: ModelParams) -> MlpParams:
    n = sum(1 for k in params if k.startswith("mlp.w"))
    return MlpParams(
        [params[f"mlp.w{k}"] for k in range(1, n + 1)],
        [params[f"mlp.b{k}"] for k in range(1, n + 1)],
    )


# -- batches ----------------------------------------------------------------

@lru_cache(maxsize=4096)
def _cells_for_box(box: tuple, H: int, W: int, r: int) -> np.ndarray:
    return geometry.proposal_cells(geometry.BBox(*box), H, W, r)


@dataclass
class Batch:
    grids: np.ndarray       # B x T x H x W x C
    cell_index: np.ndarray  # B x N x K; ROI cell lists padded by repeating the first cell
    labels: np.ndarray      # B x N
    boxes: np.ndarray       # B x N x 4

    def __len__(self):
        return self.grids.shape[0]


def build_batch(grids: Sequence[np.ndarray], proposals: Sequence[Sequence[geometry.Proposal]], r: int) -> Batch:
    grids = np.stack([np.asarray(g, dtype=np.float64) for g in grids])
    _, _, H, W, _ = grids.shape
    n = {len(p) for p in proposals}
    if len(n) != 1:
        raise ValueError(f"every sample needs the same proposal count, got {sorted(n)}")
    cells = [[_cells_for_box(p.box.as_tuple(), H, W, r) for p in props] for props in proposals]
    K = max(len(c) for row in cells for c in row)
    index = np.empty((len(proposals), n.pop(), K), dtype=np.int64)
    for b, row in enumerate(cells):
        for i, c in enumerate(row):
            index[b, i, : len(c)] = c
            index[b, i, len(c):] = c[0]
    labels = np.array([[p.label for p in props] for props in proposals], dtype=np.int64)
    boxes = np.array([[p.box.as_tuple() for p in props] for props in proposals])
    return Batch(grids, index, labels, boxes)


# -- forward / backward -----------------------------------------------------

@dataclass
class Tape:
    cfg: RunConfig
    params: ModelParams
    batch: Batch
    aggregated: np.ndarray  # B x HW x C
    argcell: np.ndarray     # B x N x C, linear cell feeding each node feature
    v: np.ndarray
    gcn: GcnTape | None
    u: np.ndarray
    descriptor: np.ndarray  # B x C
    acts: list
    scores: np.ndarray


def _check_batch(batch: Batch, cfg: RunConfig) -> None:
    _, T, H, W, C = batch.grids.shape
    want = (cfg.frames, cfg.height, cfg.width, cfg.channels)
    if (T, H, W, C) != want:
        raise ValueError(f"geometry: grid dims (T,H,W,C)={(T, H, W, C)} but configuration says {want}")
    if batch.cell_index.shape[1] != cfg.n_proposals:
        raise ValueError(f"geometry: {batch.cell_index.shape[1]} proposals per sample, configuration says {cfg.n_proposals}")


def forward(batch: Batch, params: ModelParams, cfg: RunConfig):
    """Scores ``(B, N)``, edge matrices ``(B, N, N)`` (None without the graph), and the tape."""
    check_params(params, cfg)
    _check_batch(batch, cfg)
    X = batch.grids
    B, T, H, W, C = X.shape
    agg = np.einsum("bthwc,tcd->bhwd", X, params["temporal_conv"][:, 0, 0]).reshape(B, H * W, C)
    gathered = agg[np.arange(B)[:, None, None], batch.cell_index]  # B x N x K x C
    k = np.argmax(gathered, axis=2)
    v = np.take_along_axis(gathered, k[:, :, None, :], axis=2)[:, :, 0, :]
    argcell = np.take_along_axis(batch.cell_index, k, axis=2)

    if cfg.no_graph:
        u, e, gtape = v, None, None
    else:
        u, e, gtape = gcn_forward(v, edge_params(params), gcn_weights(params),
                                  self_attention=not cfg.no_self_attention)
    descriptor = X.mean(axis=(1, 2, 3))
    y = u if cfg.no_global_descriptor else fuse_global(u, descriptor)
    logits, acts = mlp_forward(y, mlp_params(params))
    scores = sigmoid(logits)
    tape = Tape(cfg, params, batch, agg, argcell, v, gtape, u, descriptor, acts, scores)
    return scores, e, tape


def batch_loss(tape: Tape, labels: np.ndarray | None = None) -> tuple[float, list[LossBreakdown]]:
    labels = tape.batch.labels if labels is None else labels
    parts = [mined_loss(s, l) for s, l in zip(tape.scores, labels)]
    return float(np.mean([p.total for p in parts])), parts


def backward(tape: Tape, labels: np.ndarray | None = None, loss_scale: float = 1.0):
    """Gradients of ``loss_scale * mean_b mined_loss`` for every named parameter.

    Returns ``(loss, grads, breakdowns)``.
    """
    cfg = tape.cfg
    loss, parts = batch_loss(tape, labels)
    B, N = tape.scores.shape
    C = cfg.channels
    d_scores = np.stack([p.d_scores for p in parts]) * (loss_scale / B)
    s = tape.scores
    d_logits = d_scores * s * (1.0 - s)

    grads = {}
    dy, dws, dbs = mlp_backward(d_logits, tape.acts, mlp_params(tape.params))
    for k in range(len(dws)):
        grads[f"mlp.w{k + 1}"] = dws[k]
        grads[f"mlp.b{k + 1}"] = dbs[k]
    du = dy[..., :C]

    if cfg.no_graph:
        dv = du
        grads["edge.gamma"] = np.zeros((C, cfg.d))
        grads["edge.gamma_prime"] = np.zeros((C, cfg.d))
        grads["edge.phi"] = np.zeros(2 * cfg.d)
        for k in range(1, 4):
            grads[f"gcn.w{k}"] = np.zeros((C, C))
    else:
        dv, dedge, dgcn = gcn_backward(du, tape.gcn, edge_params(tape.params), gcn_weights(tape.params))
        grads["edge.gamma"] = dedge["gamma"]
        grads["edge.gamma_prime"] = dedge["gamma_prime"]
        grads["edge.phi"] = dedge["phi"]
        for k in range(3):
            grads[f"gcn.w{k + 1}"] = dgcn[k]

    X = tape.batch.grids
    _, T, H, W, _ = X.shape
    d_agg = np.zeros((B, H * W, C))
    bi = np.broadcast_to(np.arange(B)[:, None, None], dv.shape)
    ci = np.broadcast_to(np.arange(C)[None, None, :], dv.shape)
    np.add.at(d_agg, (bi, tape.argcell, ci), dv)
    dw = np.einsum("bthwc,bhwd->tcd", X, d_agg.reshape(B, H, W, C))
    grads["temporal_conv"] = dw[:, None, None]

    ordered = {name: grads[name] for name in param_shapes(cfg)}
    return loss, ordered, parts
