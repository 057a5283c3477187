import json
import warnings

import numpy as np
import pytest
from hypothesis import given, strategies as st

from objimportance.evaluation import (
    ApReport, FoldResult, Prediction, eleven_point_ap, evaluate_splits, match_predictions, rank_and_match,
)
from objimportance.geometry import BBox


# -- independent oracles --------------------------------------------------------

def oracle_iou(a, b):
    ix = max(0.0, min(a[2], b[2]) - max(a[0], b[0]))
    iy = max(0.0, min(a[3], b[3]) - max(a[1], b[1]))
    inter = ix * iy
    union = (a[2] - a[0]) * (a[3] - a[1]) + (b[2] - b[0]) * (b[3] - b[1]) - inter
    return inter / union if inter > 0 else 0.0


def oracle_match(pred_boxes, gt_boxes):
    """Predictions already in rank order; each takes its best-IOU free GT above 0.5."""
    free = list(range(len(gt_boxes)))
    flags = []
    for p in pred_boxes:
        cands = [(oracle_iou(p, gt_boxes[g]), -g) for g in free]
        best = max(cands) if cands else None
        if best is not None and best[0] > 0.5:
            free.remove(-best[1])
            flags.append(True)
        else:
            flags.append(False)
    return flags


def oracle_ap(flags, n_gt):
    if n_gt == 0:
        return 0.0
    total = 0.0
    for i in range(11):
        t = i / 10
        best = 0.0
        tp = 0
        for k, f in enumerate(flags, 1):
            tp += f
            if tp / n_gt >= t:
                best = max(best, tp / k)
        total += best
    return total / 11


GRID = [0.0, 0.1, 0.2, 0.3, 0.4, 0.5]


@st.composite
def small_box(draw):
    # coarse coordinates make exact overlaps and ties common
    x1 = draw(st.sampled_from(GRID))
    y1 = draw(st.sampled_from(GRID))
    w = draw(st.sampled_from([0.1, 0.2, 0.3, 0.5]))
    h = draw(st.sampled_from([0.1, 0.2, 0.3, 0.5]))
    return (x1, y1, x1 + w, y1 + h)


@st.composite
def instance(draw):
    preds = draw(st.lists(small_box(), max_size=6))
    gts = draw(st.lists(small_box(), max_size=4))
    return preds, gts


# -- matching -------------------------------------------------------------------

def test_exact_match_is_tp():
    b = BBox(0.1, 0.1, 0.4, 0.4)
    assert match_predictions([Prediction(b, 0.9)], [b]) == [True]


def test_duplicate_predictions_single_gt():
    b = BBox(0.1, 0.1, 0.4, 0.4)
    flags = match_predictions([Prediction(b, 0.9), Prediction(b, 0.8)], [b])
    assert flags == [True, False]


def test_best_iou_unmatched_gt_wins():
    gts = [BBox(0.0, 0.0, 0.5, 0.5), BBox(0.0, 0.0, 0.4, 0.4)]
    pred = Prediction(BBox(0.0, 0.0, 0.41, 0.41), 0.9)
    # both above 0.5; the second is closer and is consumed
    flags = match_predictions([pred, Prediction(BBox(0.0, 0.0, 0.5, 0.5), 0.8)], gts)
    assert flags == [True, True]


@given(instance())
def test_match_equals_greedy_oracle(inst):
    preds, gts = inst
    got = match_predictions([Prediction(BBox(*p), 1.0 - k / 10) for k, p in enumerate(preds)],
                            [BBox(*g) for g in gts])
    assert got == oracle_match(preds, gts)
    assert sum(got) <= len(gts)


# -- AP ---------------------------------------------------------------------------

def test_ap_examples():
    assert eleven_point_ap([True], 1) == 1.0
    assert eleven_point_ap([False, True], 1) == 0.5


def test_ap_zero_gt_warns():
    with pytest.warns(UserWarning):
        assert eleven_point_ap([False, False], 0) == 0.0


@given(instance())
def test_ap_equals_definitional_oracle(inst):
    preds, gts = inst
    flags = oracle_match(preds, gts)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        got = eleven_point_ap(flags, len(gts))
    assert abs(got - oracle_ap(flags, len(gts))) <= 1e-12
    assert 0.0 <= got <= 1.0


@given(st.lists(st.booleans(), max_size=12), st.integers(1, 6))
def test_appending_lowest_fp_never_helps_and_tp_never_hurts(flags, extra_gt):
    n_gt = sum(flags) + extra_gt
    base = eleven_point_ap(flags, n_gt)
    assert eleven_point_ap(flags + [False], n_gt) <= base
    assert eleven_point_ap(flags + [True], n_gt) >= base


@given(st.lists(st.tuples(st.lists(st.floats(0.01, 0.99), min_size=3, max_size=3),
                          st.lists(st.integers(0, 1), min_size=3, max_size=3)), min_size=1, max_size=5))
def test_ap_depends_only_on_ranking(samples):
    boxes = [BBox(0.0, 0.0, 0.2, 0.2), BBox(0.3, 0.3, 0.5, 0.5), BBox(0.6, 0.6, 0.8, 0.8)]
    raw = [(boxes, np.array(s), [boxes[i] for i in range(3) if l[i]]) for s, l in samples]
    # a strictly increasing map of the scores
    warped = [(b, np.exp(3 * s) - 1.0, g) for b, s, g in raw]
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        a1 = eleven_point_ap(*rank_and_match(raw))
        a2 = eleven_point_ap(*rank_and_match(warped))
    assert a1 == a2


def test_rank_and_match_pools_samples():
    b1, b2 = BBox(0.0, 0.0, 0.2, 0.2), BBox(0.5, 0.5, 0.7, 0.7)
    samples = [([b1, b2], np.array([0.9, 0.2]), [b1]), ([b1, b2], np.array([0.5, 0.8]), [b2])]
    flags, n_gt = rank_and_match(samples)
    # global order 0.9(s0 TP), 0.8(s1 TP), 0.5(s1 FP), 0.2(s0 FP)
    assert flags == [True, True, False, False] and n_gt == 2
    assert eleven_point_ap(flags, n_gt) == 1.0


def test_missing_detection_caps_ap():
    b1, b2 = BBox(0.0, 0.0, 0.2, 0.2), BBox(0.5, 0.5, 0.7, 0.7)
    flags, n_gt = rank_and_match([([b1], np.array([0.9]), [b1, b2])])
    assert n_gt == 2 and eleven_point_ap(flags, n_gt) < 1.0


# -- reporting -----------------------------------------------------------------------

class _Scene:
    def __init__(self, split, props, gts):
        self.split, self.test_proposals, self.gt_boxes = split, props, gts


def test_evaluate_splits_with_oracle_scorer():
    from objimportance.geometry import Proposal
    b1, b2 = BBox(0.0, 0.0, 0.2, 0.2), BBox(0.5, 0.5, 0.7, 0.7)
    scenes = [_Scene(k, [Proposal(b1, label=1), Proposal(b2)], [b1]) for k in (1, 2, 3, 1, 2, 3)]
    seen = []

    def fit(train, fold):
        seen.append((fold, sorted({s.split for s in train})))
        return None

    def score(_, test):
        return [np.array([float(p.label) for p in s.test_proposals]) for s in test]

    rep = evaluate_splits(scenes, fit, score)
    assert rep.ap_per_split == [1.0, 1.0, 1.0] and rep.avg_ap == 1.0
    assert seen == [(1, [2, 3]), (2, [1, 3]), (3, [1, 2])]


@pytest.mark.filterwarnings("ignore:no ground truth")
def test_evaluate_splits_empty_split_errors():
    scenes = [_Scene(1, [], []), _Scene(2, [], [])]
    with pytest.raises(ValueError, match="split 3"):
        evaluate_splits(scenes, lambda *a: None, lambda m, t: [np.zeros(0)] * len(t))


def test_report_records_and_table():
    rep = ApReport([FoldResult(1, 0.5, 10, 4), FoldResult(2, 0.75, 10, 4), FoldResult(3, 1.0, 10, 4)])
    lines = [json.loads(l) for l in rep.records()]
    assert lines[0] == {"fold": 1, "ap": 0.5, "n_samples": 10, "n_gt": 4}
    assert lines[-1]["summary"] and lines[-1]["avg_ap"] == pytest.approx(0.75)
    table = rep.table("full").splitlines()
    assert table[0].split() == ["AP1", "AP2", "AP3", "avgAP"]
    assert table[1].split() == ["full", "50.0", "75.0", "100.0", "75.0"]
