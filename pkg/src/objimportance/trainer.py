"""SGD with momentum, inverse-time decay and L2; training loop; finite-difference gradient checker."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import model
from .config import RunConfig
from .geometry import BBox, Proposal

log = logging.getLogger(__name__)


class NumericalError(RuntimeError):
    pass


@dataclass
class OptimizerState:
    lr: float
    momentum: float
    decay: float
    l2: float
    velocity: dict = field(default_factory=dict)
    step: int = 0

    @classmethod
    def from_config(cls, cfg: RunConfig, params: model.ModelParams) -> "OptimizerState":
        return cls(cfg.lr, cfg.momentum, cfg.decay, cfg.l2,
                   {k: np.zeros_like(v) for k, v in params.items()})

    @property
    def effective_lr(self) -> float:
        return self.lr / (1.0 + self.decay * self.step)


def sgd_step(params: model.ModelParams, grads: dict, state: OptimizerState) -> None:
    """In-place update: ``v = mu*v - lr_t*(g + l2*theta)``, ``theta += v``."""
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise NumericalError(f"non-finite gradient for parameter {name!r} at step {state.step}")
    lr_t = state.effective_lr
    for name, theta in params.items():
        g = grads[name] + state.l2 * theta
        vel = state.momentum * state.velocity[name] - lr_t * g
        state.velocity[name] = vel
        theta += vel
    state.step += 1


# -- training ---------------------------------------------------------------

@dataclass
class TrainLog:
    epoch_loss: list[float] = field(default_factory=list)
    step_loss: list[float] = field(default_factory=list)
    edge_row_sums: list[float] = field(default_factory=list)  # mean row sum of E per epoch


def train(cfg: RunConfig, batches_source: Sequence, params: model.ModelParams | None = None,
          epochs: int | None = None, on_epoch: Callable | None = None):
    """Train on pre-built per-sample items ``(grid, proposals)``.

    Sample order is reshuffled every epoch from a generator seeded by ``cfg.seed``.
    """
    params = model.init_params(cfg) if params is None else params
    state = OptimizerState.from_config(cfg, params)
    rng = np.random.default_rng([cfg.seed, 1])
    tlog = TrainLog()
    items = list(batches_source)
    n_epochs = cfg.epochs if epochs is None else epochs
    for epoch in range(n_epochs):
        order = rng.permutation(len(items))
        losses, rows = [], []
        for start in range(0, len(items), cfg.batch_size):
            chunk = [items[i] for i in order[start:start + cfg.batch_size]]
            batch = chunk_batch(chunk, cfg)
            _, e, tape = model.forward(batch, params, cfg)
            loss, grads, _ = model.backward(tape)
            if not np.isfinite(loss):
                raise NumericalError(f"non-finite loss at step {state.step}")
            sgd_step(params, grads, state)
            losses.append(loss)
            tlog.step_loss.append(loss)
            if e is not None:
                rows.append(float(e.sum(axis=-1).mean()))
        tlog.epoch_loss.append(float(np.mean(losses)))
        tlog.edge_row_sums.append(float(np.mean(rows)) if rows else float("nan"))
        log.info("epoch %d loss %.6f", epoch + 1, tlog.epoch_loss[-1])
        if on_epoch is not None:
            on_epoch(epoch, tlog)
    return params, tlog


def chunk_batch(chunk, cfg: RunConfig) -> model.Batch:
    if isinstance(chunk, model.Batch):
        return chunk
    return model.build_batch([g for g, _ in chunk], [p for _, p in chunk], cfg.pool_size)


# -- gradient checking ------------------------------------------------------

GRADCHECK_CONFIG = RunConfig(
    n_proposals=6, channels=8, edge_dim=8, pool_size=2, frames=2, height=4, width=4,
    mlp_hidden=(8, 4),
)


@dataclass
class GradcheckReport:
    errors: dict[str, float]
    tolerance: float
    failures: list[str]
    message: str = ""

    @property
    def passed(self) -> bool:
        return not self.failures and not self.message

    def lines(self) -> list[str]:
        out = [f"{name:20s} max_rel_err={err:.3e} {'ok' if name not in self.failures else 'FAIL'}"
               for name, err in self.errors.items()]
        if self.message:
            out.append(f"error: {self.message}")
        out.append("PASS" if self.passed else f"FAIL: {', '.join(self.failures) or self.message}")
        return out


def random_instance(cfg: RunConfig, seed: int, batch_size: int = 2, attempt: int = 0):
    """A random batch plus parameters with positive biases."""
    rng = np.random.default_rng([seed, attempt])
    params = model.init_params(cfg, int(rng.integers(2**31)))
    for name in params:
        if ".b" in name:
            params[name] = rng.uniform(0.05, 0.5, size=params[name].shape)
    grids, props = [], []
    for _ in range(batch_size):
        grids.append(rng.uniform(0.0, 1.0, size=(cfg.frames, cfg.height, cfg.width, cfg.channels)))
        row = []
        for i in range(cfg.n_proposals):
            x1, x2 = np.sort(rng.uniform(0.0, 1.0, 2))
            y1, y2 = np.sort(rng.uniform(0.0, 1.0, 2))
            row.append(Proposal(BBox(x1, y1, x2, y2), label=int(rng.uniform() < 0.35)))
        props.append(row)
    return model.build_batch(grids, props, cfg.pool_size), params


def _must_be_live(cfg: RunConfig) -> set[str]:
    names = set(model.param_shapes(cfg))
    # the source term of an interaction score is constant along a softmax row
    names.discard("edge.gamma")
    if cfg.no_graph:
        names -= {n for n in names if n.startswith(("edge.", "gcn."))}
    return names


def relative_errors(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-6) -> np.ndarray:
    return np.abs(analytic - numeric) / np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)


def gradient_check(cfg: RunConfig = GRADCHECK_CONFIG, seed: int = 0, h: float = 1e-5,
                   tolerance: float = 1e-4, grad_hook: Callable | None = None) -> GradcheckReport:
    """Compare ``model.backward`` against central differences for every parameter group.

    ``grad_hook(grads)`` may tamper with the analytic gradients (used to test the checker).
    """
    try:
        # redraw until every group except the cancelled source projection has a live path
        for attempt in range(100):
            batch, params = random_instance(cfg, seed, attempt=attempt)
            _, _, tape = model.forward(batch, params, cfg)
            _, grads, _ = model.backward(tape)
            if all(np.any(g != 0) for k, g in grads.items() if k in _must_be_live(cfg)):
                break
        else:
            raise RuntimeError("no instance with live gradients for every parameter group")
        if grad_hook is not None:
            grad_hook(grads)

        def loss_at(p):
            _, _, t = model.forward(batch, p, cfg)
            return model.batch_loss(t)[0]

        errors, failures = {}, []
        for name, theta in params.items():
            numeric = np.zeros_like(theta)
            flat, nflat = theta.reshape(-1), numeric.reshape(-1)
            for i in range(flat.size):
                orig = flat[i]
                flat[i] = orig + h
                fp = loss_at(params)
                flat[i] = orig - h
                fm = loss_at(params)
                flat[i] = orig
                nflat[i] = (fp - fm) / (2 * h)
            err = float(relative_errors(grads[name], numeric).max())
            errors[name] = err
            if not err < tolerance:
                failures.append(name)
        return GradcheckReport(errors, tolerance, failures)
    except Exception as exc:  # the checker reports, it does not raise
        return GradcheckReport({}, tolerance, [], message=f"{type(exc).__name__}: {exc}")
