"""Learned directional interaction graph and the stacked graph convolution over it.

Every function accepts optional leading batch axes: node features are ``(..., N, C)``
and edge matrices ``(..., N, N)``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

N_GCN_LAYERS = 3


@dataclass
class EdgeParams:
    gamma: np.ndarray        # C x d, source-side projection
    gamma_prime: np.ndarray  # C x d, target-side projection
    phi: np.ndarray          # 2d, scores the concatenation

    def __post_init__(self):
        C, d = self.gamma.shape
        if d < 1 or self.gamma_prime.shape != (C, d) or self.phi.shape != (2 * d,):
            raise ValueError(
                f"inconsistent edge params: gamma {self.gamma.shape}, "
                f"gamma_prime {self.gamma_prime.shape}, phi {self.phi.shape}"
            )

    @property
    def d(self) -> int:
        return self.gamma.shape[1]


def interaction_scores(v: np.ndarray, p: EdgeParams) -> np.ndarray:
    """``IS[i, j] = phi . (gamma^T v_i || gamma'^T v_j)``."""
    if v.shape[-1] != p.gamma.shape[0]:
        raise ValueError(f"node features have {v.shape[-1]} channels, edge params expect {p.gamma.shape[0]}")
    d = p.d
    # row-wise reductions keep every entry independent of its node's position
    a = (v * (p.gamma @ p.phi[:d])).sum(axis=-1)
    b = (v * (p.gamma_prime @ p.phi[d:])).sum(axis=-1)
    return a[..., :, None] + b[..., None, :]


def interaction_scores_backward(d_is: np.ndarray, v: np.ndarray, p: EdgeParams):
    """Returns ``(d_v, d_gamma, d_gamma_prime, d_phi)``."""
    d = p.d
    phi_src, phi_dst = p.phi[:d], p.phi[d:]
    w_src, w_dst = p.gamma @ phi_src, p.gamma_prime @ phi_dst
    da = d_is.sum(axis=-1)
    db = d_is.sum(axis=-2)
    dv = da[..., None] * w_src + db[..., None] * w_dst
    C = v.shape[-1]
    dw_src = (da[..., None] * v).reshape(-1, C).sum(axis=0)
    dw_dst = (db[..., None] * v).reshape(-1, C).sum(axis=0)
    d_gamma = np.outer(dw_src, phi_src)
    d_gamma_prime = np.outer(dw_dst, phi_dst)
    d_phi = np.concatenate([p.gamma.T @ dw_src, p.gamma_prime.T @ dw_dst])
    return dv, d_gamma, d_gamma_prime, d_phi


def row_softmax(x: np.ndarray) -> np.ndarray:
    z = np.exp(x - x.max(axis=-1, keepdims=True))
    # summing sorted terms makes the normalizer independent of node order
    return z / np.sort(z, axis=-1).sum(axis=-1, keepdims=True)


def edge_matrix(is_mat: np.ndarray, self_attention: bool = True) -> np.ndarray:
    """Row softmax of the interaction scores, plus the identity unless disabled."""
    e = row_softmax(is_mat)
    if self_attention:
        n = is_mat.shape[-1]
        e = e + np.eye(n)
    return e


def softmax_backward(d_s: np.ndarray, s: np.ndarray) -> np.ndarray:
    return s * (d_s - (d_s * s).sum(axis=-1, keepdims=True))


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0)


def graph_conv_layer(e: np.ndarray, v: np.ndarray, w: np.ndarray) -> np.ndarray:
    if e.shape[-1] != v.shape[-2] or v.shape[-1] != w.shape[0]:
        raise ValueError(f"shape mismatch: E {e.shape}, V {v.shape}, W {w.shape}")
    return relu((e @ v) @ w)


@dataclass
class LayerRecord:
    h_in: np.ndarray
    m: np.ndarray  # E @ h_in
    z: np.ndarray  # m @ W, pre-activation
    e: np.ndarray


@dataclass
class GcnTape:
    v: np.ndarray
    is_mat: np.ndarray
    softmax: np.ndarray
    e: np.ndarray
    layers: list[LayerRecord] = field(default_factory=list)
    edge_evaluations: int = 0


def gcn_forward(v: np.ndarray, p: EdgeParams, weights: list[np.ndarray], self_attention: bool = True):
    """Build the edge matrix once from ``v`` and run the stacked graph convolutions.

    Returns ``(U, E, tape)``.
    """
    if len(weights) != N_GCN_LAYERS:
        raise ValueError(f"expected {N_GCN_LAYERS} GCN weight matrices, got {len(weights)}")
    is_mat = interaction_scores(v, p)
    s = row_softmax(is_mat)
    e = s + np.eye(s.shape[-1]) if self_attention else s
    tape = GcnTape(v=v, is_mat=is_mat, softmax=s, e=e, edge_evaluations=1)
    h = v
    for w in weights:
        if w.shape != (v.shape[-1], v.shape[-1]):
            raise ValueError(f"GCN weights must be C x C, got {w.shape}")
        m = e @ h
        z = m @ w
        tape.layers.append(LayerRecord(h_in=h, m=m, z=z, e=e))
        h = relu(z)
    return h, e, tape


def gcn_backward(d_u: np.ndarray, tape: GcnTape, p: EdgeParams, weights: list[np.ndarray]):
    """Returns ``(d_v, {"gamma", "gamma_prime", "phi"}, [d_W1, d_W2, d_W3])``."""
    C = d_u.shape[-1]
    d_e = np.zeros_like(tape.e)
    d_ws = [None] * len(weights)
    dh = d_u
    for k in reversed(range(len(weights))):
        rec = tape.layers[k]
        dz = dh * (rec.z > 0)
        d_ws[k] = rec.m.reshape(-1, C).T @ dz.reshape(-1, C)
        dm = dz @ weights[k].T
        d_e += dm @ np.swapaxes(rec.h_in, -1, -2)
        dh = np.swapaxes(rec.e, -1, -2) @ dm
    # identity term of E carries no parameters
    d_is = softmax_backward(d_e, tape.softmax)
    dv_edge, dg, dgp, dphi = interaction_scores_backward(d_is, tape.v, p)
    return dh + dv_edge, {"gamma": dg, "gamma_prime": dgp, "phi": dphi}, d_ws
