"""Glue between scenes, the model, training and evaluation."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import model, trainer
from .config import RunConfig
from .evaluation import ApReport, evaluate_splits
from .scenes import Scene

log = logging.getLogger(__name__)

EVAL_CHUNK = 64

# Training settings used for the ablation benchmark. The optimizer hyperparameters
# of ``RunConfig`` are kept; only the step size and batch size are raised so that
# 30 epochs on 400 training scenes converge on a CPU.
BENCHMARK_CONFIG = RunConfig(lr=0.003, batch_size=2, epochs=30)


def train_items(scenes: list[Scene]):
    return [(s.grid, s.proposals) for s in scenes]


def score_scenes(params: model.ModelParams, cfg: RunConfig, scenes: list[Scene], which: str = "test"):
    """Scores per scene on the chosen proposal list, plus the edge matrices (None without the graph)."""
    scores, edges = [], []
    for start in range(0, len(scenes), EVAL_CHUNK):
        chunk = scenes[start:start + EVAL_CHUNK]
        props = [s.test_proposals if which == "test" else s.proposals for s in chunk]
        batch = model.build_batch([s.grid for s in chunk], props, cfg.pool_size)
        sc, e, _ = model.forward(batch, params, cfg)
        scores.extend(sc)
        edges.extend(e if e is not None else [None] * len(chunk))
    return scores, edges


@dataclass
class CvResult:
    report: ApReport
    params: dict = field(default_factory=dict)   # fold -> params
    logs: dict = field(default_factory=dict)     # fold -> TrainLog


def cross_validate(cfg: RunConfig, scenes: list[Scene]) -> CvResult:
    result = CvResult(report=None)

    def fit(train, fold):
        params = model.init_params(cfg, seed=cfg.seed + 1000 * fold)
        params, tlog = trainer.train(cfg, train_items(train), params=params)
        result.params[fold] = params
        result.logs[fold] = tlog
        log.info("fold %d trained: final epoch loss %.5f", fold, tlog.epoch_loss[-1] if tlog.epoch_loss else float("nan"))
        return params

    def score(params, test):
        return score_scenes(params, cfg, test)[0]

    result.report = evaluate_splits(scenes, fit, score)
    return result


def oracle_scores(scenes: list[Scene]):
    """Scores equal to the labels of the test proposals."""
    return [np.array([float(p.label) for p in s.test_proposals]) for s in scenes]
