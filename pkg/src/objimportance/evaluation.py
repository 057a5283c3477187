"""11-point average precision with greedy, no-duplicate IOU matching, and 3-fold reporting."""
from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .geometry import BBox, iou

IOU_THRESHOLD = 0.5
RECALL_LEVELS = [i / 10 for i in range(11)]


@dataclass(frozen=True)
class Prediction:
    box: BBox
    score: float
    sample_id: int = 0


def match_predictions(preds: Sequence[Prediction], gts: Sequence[BBox],
                      threshold: float = IOU_THRESHOLD) -> list[bool]:
    """Greedy matching in the given (score-descending) order.

    A prediction is a true positive when its best-IOU *unmatched* ground truth
    overlaps by more than ``threshold``; that ground truth is then consumed.
    IOU ties go to the lower ground-truth index.
    """
    used = [False] * len(gts)
    flags = []
    for p in preds:
        best, best_iou = -1, threshold
        for g, gt in enumerate(gts):
            if used[g]:
                continue
            o = iou(p.box, gt)
            if o > best_iou:
                best, best_iou = g, o
        if best >= 0:
            used[best] = True
        flags.append(best >= 0)
    return flags


def pr_curve(flags: Sequence[bool], n_gt: int) -> tuple[np.ndarray, np.ndarray]:
    tp = np.cumsum(np.asarray(flags, dtype=np.int64))
    k = np.arange(1, len(tp) + 1)
    precision = tp / k
    recall = tp / n_gt if n_gt > 0 else np.zeros(len(tp))
    return recall, precision


def eleven_point_ap(flags: Sequence[bool], n_gt: int) -> float:
    if n_gt < 0:
        raise ValueError("n_gt must be non-negative")
    if n_gt == 0:
        warnings.warn("no ground truth boxes; AP reported as 0")
        return 0.0
    tp = np.cumsum(np.asarray(flags, dtype=np.int64))
    precision = tp / np.arange(1, len(tp) + 1)
    total = 0.0
    for i in range(11):
        # integer test of recall >= i/10
        reach = tp * 10 >= i * n_gt
        total += precision[reach].max() if reach.any() else 0.0
    return total / 11


def rank_and_match(samples: Sequence[tuple[Sequence[BBox], np.ndarray, Sequence[BBox]]]):
    """Pool predictions from many samples into one ranking.

    ``samples`` holds ``(proposal boxes, scores, ground-truth boxes)`` per sample.
    Returns ``(flags in global rank order, total ground truths)``. Equal scores
    keep sample order, then proposal order.
    """
    entries = []  # (score, sample, proposal, flag)
    n_gt = 0
    for sid, (boxes, scores, gts) in enumerate(samples):
        scores = np.asarray(scores, dtype=np.float64)
        order = np.argsort(-scores, kind="stable")
        preds = [Prediction(boxes[i], float(scores[i]), sid) for i in order]
        flags = match_predictions(preds, gts)
        entries.extend((float(scores[i]), sid, int(i), f) for i, f in zip(order, flags))
        n_gt += len(gts)
    entries.sort(key=lambda e: (-e[0], e[1], e[2]))
    return [e[3] for e in entries], n_gt


@dataclass
class FoldResult:
    fold: int
    ap: float
    n_samples: int
    n_gt: int
    recall: np.ndarray = field(repr=False, default=None)
    precision: np.ndarray = field(repr=False, default=None)


@dataclass
class ApReport:
    folds: list[FoldResult]

    @property
    def ap_per_split(self) -> list[float]:
        return [f.ap for f in self.folds]

    @property
    def avg_ap(self) -> float:
        return float(np.mean(self.ap_per_split))

    def records(self) -> list[str]:
        """Line-delimited JSON: one record per fold plus a summary."""
        lines = [json.dumps({"fold": f.fold, "ap": f.ap, "n_samples": f.n_samples, "n_gt": f.n_gt})
                 for f in self.folds]
        lines.append(json.dumps({"summary": True, "ap_per_split": self.ap_per_split, "avg_ap": self.avg_ap}))
        return lines

    def table(self, name: str = "model") -> str:
        head = f"{'':24s}" + "".join(f"{'AP' + str(f.fold):>8s}" for f in self.folds) + f"{'avgAP':>8s}"
        row = f"{name:24s}" + "".join(f"{100 * f.ap:8.1f}" for f in self.folds) + f"{100 * self.avg_ap:8.1f}"
        return head + "\n" + row


def evaluate_fold(fold: int, samples) -> FoldResult:
    flags, n_gt = rank_and_match(samples)
    rec, prec = pr_curve(flags, n_gt)
    return FoldResult(fold, eleven_point_ap(flags, n_gt), len(samples), n_gt, rec, prec)


def evaluate_splits(scenes, fit: Callable, score: Callable, folds=(1, 2, 3)) -> ApReport:
    """Cross-validate: for each fold, ``fit`` on the other splits and ``score`` the held-out one.

    ``fit(train_scenes, fold)`` returns a model object; ``score(model, scenes)``
    returns one score vector per scene, aligned with ``scene.test_proposals``.
    """
    results = []
    for k in folds:
        test = [s for s in scenes if s.split == k]
        train = [s for s in scenes if s.split != k]
        if not test:
            raise ValueError(f"split {k} is empty")
        m = fit(train, k)
        scores = score(m, test)
        samples = [([p.box for p in s.test_proposals], sc, s.gt_boxes) for s, sc in zip(test, scores)]
        results.append(evaluate_fold(k, samples))
    return ApReport(results)
