"""Synthetic driving scenes whose importance labels depend on object interactions.

Each scene is a handful of cars and pedestrians seen from the ego vehicle. An
object is important when it sits in the ego lane and no nearer car in the ego
lane shields it (the lead car takes the attention, whatever is behind it does
not). Attributes are rendered into disjoint channel groups of a ``T x H x W x C``
grid so a small model can read them without a pretrained backbone.
"""
from __future__ import annotations

import math
import os
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .config import RunConfig
from .geometry import DUMMY_BOX, BBox, Proposal, pad_proposals

CAR, PEDESTRIAN = 0, 1

# channel layout
CH_CAR, CH_PED = 0, 1
CH_VX_POS, CH_VX_NEG = 2, 3
CH_PROXIMITY = 4
CH_POSITION = slice(5, 10)   # lateral population code of the object centre
CH_LANE = slice(10, 15)      # population code of the ego-lane centre, background only
CH_HOOD = 15
MIN_CHANNELS = 16

CODE_CENTERS = np.array([0.1, 0.3, 0.5, 0.7, 0.9])
CODE_WIDTH = 0.2
MAX_SPEED = 0.15
HORIZON = 0.375            # everything above this is sky / buildings
LEAD_DEPTH = (0.0, 0.4)
LANE_PED_DEPTH = (0.5, 1.0)


@dataclass
class SceneConfig:
    n_scenes: int = 600
    min_objects: int = 1
    max_objects: int = 6
    empty_prob: float = 0.5      # chance that no object is placed in the ego lane
    lead_prob: float = 0.75      # chance of a lead car in the ego lane (non-empty scenes)
    max_lane_peds: int = 3
    car_prob: float = 0.2       # type mix of traffic outside the ego lane
    max_clutter: int = 4         # generic distant objects above the horizon
    max_decoys: int = 3          # lead-car signatures per frame, real one included
    noise_sigma: float = 0.1
    suppression: bool = True
    lane_center: float = 0.5
    lane_halfwidth: float = 0.12
    random_lane: bool = False    # draw the lane centre per scene from [0.3, 0.7]
    lookahead: float = 0.0       # seconds of lateral motion projected before the lane test
    miss_prob: float = 0.0       # chance the detector misses an object
    data_seed: int = 7

    def __post_init__(self):
        if not 0 <= self.min_objects <= self.max_objects:
            raise ValueError("need 0 <= min_objects <= max_objects")
        for name in ("empty_prob", "lead_prob", "car_prob", "miss_prob"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1]")
        if self.noise_sigma < 0 or self.lane_halfwidth <= 0:
            raise ValueError("noise_sigma must be >= 0 and lane_halfwidth > 0")


@dataclass(frozen=True)
class SceneObject:
    kind: int
    box: BBox
    depth: float       # 0 nearest, 1 farthest
    vx: float          # lateral velocity, normalized units per second
    detected: bool = True

    @property
    def cx(self) -> float:
        return 0.5 * (self.box.x1 + self.box.x2)


@dataclass(frozen=True)
class SceneRule:
    lane_center: float
    lane_halfwidth: float
    suppression: bool = True
    lookahead: float = 0.0

    def in_cone(self, obj: SceneObject) -> bool:
        return abs(obj.cx + obj.vx * self.lookahead - self.lane_center) <= self.lane_halfwidth

    def labels(self, objects: list[SceneObject]) -> list[int]:
        cone = [self.in_cone(o) for o in objects]
        out = []
        for i, o in enumerate(objects):
            shielded = self.suppression and any(
                cone[j] and objects[j].kind == CAR and objects[j].depth < o.depth
                for j in range(len(objects)) if j != i
            )
            out.append(int(cone[i] and not shielded))
        return out


@dataclass
class Scene:
    grid: np.ndarray                 # T x H x W x C
    proposals: list[Proposal]        # training list: undetected objects replace dummies
    test_proposals: list[Proposal]   # detector output padded with dummies
    split: int
    seed: int
    index: int = 0
    lane_center: float = 0.5
    objects: list[SceneObject] = field(default_factory=list)

    @property
    def labels(self) -> np.ndarray:
        return np.array([p.label for p in self.proposals], dtype=np.int64)

    @property
    def gt_boxes(self) -> list[BBox]:
        return [p.box for p in self.proposals if p.label == 1]


# -- rendering helpers --------------------------------------------------------

def position_code(x: float) -> np.ndarray:
    return np.maximum(0.0, 1.0 - np.abs(x - CODE_CENTERS) / CODE_WIDTH)


def footprint(box: BBox, H: int, W: int) -> tuple[slice, slice]:
    r0 = min(int(math.floor(box.y1 * H)), H - 1)
    r1 = max(int(math.ceil(box.y2 * H)), r0 + 1)
    c0 = min(int(math.floor(box.x1 * W)), W - 1)
    c1 = max(int(math.ceil(box.x2 * W)), c0 + 1)
    return slice(r0, min(r1, H)), slice(c0, min(c1, W))


def signature(kind: int, cx: float, depth: float, vx: float, C: int) -> np.ndarray:
    """Channel vector painted over an object's footprint."""
    f = np.zeros(C)
    f[CH_CAR if kind == CAR else CH_PED] = 1.0
    f[CH_VX_POS] = max(vx, 0.0) / MAX_SPEED
    f[CH_VX_NEG] = max(-vx, 0.0) / MAX_SPEED
    f[CH_PROXIMITY] = 1.0 - depth
    f[CH_POSITION] = position_code(cx)
    return f


def object_features(obj: SceneObject, C: int) -> np.ndarray:
    return signature(obj.kind, obj.cx, obj.depth, obj.vx, C)


def render(objects: list[SceneObject], lane_center: float, cfg: RunConfig, sigma: float,
           rng: np.random.Generator) -> np.ndarray:
    T, H, W, C = cfg.frames, cfg.height, cfg.width, cfg.channels
    base = np.zeros((H, W, C))
    base[:, :, CH_LANE] = position_code(lane_center)
    rows, cols = footprint(DUMMY_BOX, H, W)
    base[rows, cols, :] = 0.0
    base[rows, cols, CH_HOOD] = 1.0
    for obj in objects:
        rows, cols = footprint(obj.box, H, W)
        base[rows, cols, :] = object_features(obj, C)
    noise = rng.normal(0.0, sigma, size=(T, H, W, C)) if sigma > 0 else np.zeros((T, H, W, C))
    return np.maximum(base[None] + noise, 0.0)


# -- generation -------------------------------------------------------------

def _object_box(kind: int, depth: float, cx: float, H: int) -> BBox | None:
    # nothing may reach the hood rows, which dummy proposals pool over
    y_max = math.floor(DUMMY_BOX.y1 * H) / H - 0.01
    y2 = y_max - 0.42 * depth
    h = 0.05 + 0.13 * (1.0 - depth)
    w = (1.1 if kind == CAR else 0.45) * h
    x1, x2 = cx - w / 2, cx + w / 2
    if x1 < 0.0 or x2 > 1.0 or y2 - h < 0.0:
        return None
    return BBox(x1, y2 - h, x2, y2)


def _cells(box: BBox, H: int, W: int) -> set[int]:
    rows, cols = footprint(box, H, W)
    return {r * W + c for r in range(rows.start, rows.stop) for c in range(cols.start, cols.stop)}


def _try_place(kind, in_lane, depth_range, scfg, cfg, lane_center, occupied, rng):
    H, W = cfg.height, cfg.width
    hw = scfg.lane_halfwidth
    for _ in range(50):
        depth = float(rng.uniform(*depth_range))
        vx = float(rng.uniform(-MAX_SPEED, MAX_SPEED))
        if in_lane:
            target = lane_center + float(rng.uniform(-0.8, 0.8)) * hw
        else:
            target = float(rng.uniform(0.02, 0.98))
            if abs(target - lane_center) < hw + 0.04:
                continue
        box = _object_box(kind, depth, target - vx * scfg.lookahead, H)
        if box is None:
            continue
        cells = _cells(box, H, W)
        if cells & occupied:
            continue
        occupied |= cells
        return SceneObject(kind, box, depth, vx)
    return None


def place_objects(scfg: SceneConfig, cfg: RunConfig, lane_center: float,
                  rng: np.random.Generator) -> list[SceneObject]:
    """Lead-car scenario: an optional near car in the ego lane, pedestrians farther up
    the lane, and unrelated traffic outside it."""
    empty = rng.uniform() < scfg.empty_prob
    k = int(rng.integers(scfg.min_objects, scfg.max_objects + 1))
    plan = []  # (kind, in_lane, depth range)
    if not empty:
        lead = rng.uniform() < scfg.lead_prob
        n_peds = int(rng.integers(1, scfg.max_lane_peds + 1))
        if lead:
            plan.append((CAR, True, LEAD_DEPTH))
        plan += [(PEDESTRIAN, True, LANE_PED_DEPTH)] * n_peds
    while len(plan) < k:
        kind = CAR if rng.uniform() < scfg.car_prob else PEDESTRIAN
        plan.append((kind, False, (0.0, 1.0)))
    objects, occupied = [], set()
    for kind, in_lane, depth_range in plan:
        obj = _try_place(kind, in_lane, depth_range, scfg, cfg, lane_center, occupied, rng)
        if obj is not None:
            objects.append(obj)
    return objects


def _paint_above_horizon(grid: np.ndarray, kind: int, depth: float, cx: float, vx: float,
                         rng: np.random.Generator) -> None:
    T, H, W, C = grid.shape
    box = _object_box(kind, depth, cx, H)
    if box is None:
        return
    h = box.y2 - box.y1
    y1 = float(rng.uniform(0.0, max(HORIZON - h, 0.0)))
    rows, cols = footprint(BBox(box.x1, y1, box.x2, y1 + h), H, W)
    rows = slice(rows.start, min(rows.stop, max(1, int(math.floor(HORIZON * H)))))
    grid[:, rows, cols, :] = signature(kind, cx, depth, vx, C)


def render_clutter(grid: np.ndarray, scfg: SceneConfig, lane_center: float, n_lead: int,
                   rng: np.random.Generator) -> None:
    """Paint distant traffic above the horizon, where no proposal ever reaches.

    The total number of lead-car signatures in the frame (real plus painted) is
    drawn independently of whether the scene has a lead car, so frame-wide
    statistics say nothing about it; only the proposal nodes do.
    """
    hw = scfg.lane_halfwidth
    n_lead_like = int(rng.integers(1, scfg.max_decoys + 1)) - n_lead if scfg.max_decoys else 0
    for _ in range(max(n_lead_like, 0)):
        _paint_above_horizon(grid, CAR, float(rng.uniform(*LEAD_DEPTH)),
                             lane_center + float(rng.uniform(-0.8, 0.8)) * hw,
                             float(rng.uniform(-MAX_SPEED, MAX_SPEED)), rng)
    for _ in range(int(rng.integers(0, scfg.max_clutter + 1))):
        kind = CAR if rng.uniform() < scfg.car_prob else PEDESTRIAN
        if rng.uniform() < 0.5:
            cx, depth = lane_center + float(rng.uniform(-0.8, 0.8)) * hw, float(rng.uniform(*LANE_PED_DEPTH))
        else:
            cx, depth = float(rng.uniform(0.02, 0.98)), float(rng.uniform(0.0, 1.0))
        _paint_above_horizon(grid, kind, depth, cx, float(rng.uniform(-MAX_SPEED, MAX_SPEED)), rng)


def _streams(seed: int, index: int):
    geom = np.random.default_rng([seed, index, 0])
    noise = np.random.default_rng([seed, index, 1])
    return geom, noise


def generate_scene(cfg: RunConfig, scfg: SceneConfig, seed: int, index: int = 0, split: int = 1) -> Scene:
    """One scene; geometry and rendering noise use independent streams of ``(seed, index)``."""
    if cfg.channels < MIN_CHANNELS:
        raise ValueError(f"synthetic scenes need at least {MIN_CHANNELS} channels, config has {cfg.channels}")
    if scfg.max_objects > cfg.n_proposals:
        raise ValueError(f"max_objects={scfg.max_objects} cannot fit in {cfg.n_proposals} proposals")
    geom, noise = _streams(seed, index)
    lane_center = float(geom.uniform(0.3, 0.7)) if scfg.random_lane else scfg.lane_center
    objects = place_objects(scfg, cfg, lane_center, geom)
    order = geom.permutation(len(objects))
    objects = [objects[i] for i in order]
    missed = geom.uniform(size=len(objects)) < scfg.miss_prob
    objects = [SceneObject(o.kind, o.box, o.depth, o.vx, detected=not m) for o, m in zip(objects, missed)]
    rule = SceneRule(lane_center, scfg.lane_halfwidth, scfg.suppression, scfg.lookahead)
    labels = rule.labels(objects)

    detected = [Proposal(o.box, label=l) for o, l in zip(objects, labels) if o.detected]
    undetected = [Proposal(o.box, label=l) for o, l in zip(objects, labels) if not o.detected]
    test_props = pad_proposals(detected, cfg.n_proposals)
    train_props = pad_proposals(detected + undetected, cfg.n_proposals)
    grid = render(objects, lane_center, cfg, scfg.noise_sigma, noise)
    n_lead = sum(1 for o in objects if o.kind == CAR and rule.in_cone(o))
    render_clutter(grid, scfg, lane_center, n_lead, noise)
    return Scene(grid, train_props, test_props, split, seed, index, lane_center, objects)


def split_assignment(n: int, seed: int) -> np.ndarray:
    if n % 3:
        warnings.warn(f"{n} scenes do not divide into 3 equal splits; split sizes differ by one")
    splits = np.array([(i % 3) + 1 for i in range(n)])
    return np.random.default_rng([seed, 2**20]).permutation(splits)


def worker_count() -> int:
    try:
        return max(1, int(os.environ.get("OBJIMPORTANCE_THREADS", "1")))
    except ValueError:
        return 1


def generate_dataset(cfg: RunConfig, scfg: SceneConfig, seed: int | None = None) -> list[Scene]:
    seed = scfg.data_seed if seed is None else seed
    splits = split_assignment(scfg.n_scenes, seed)

    def make(i):
        return generate_scene(cfg, scfg, seed, i, int(splits[i]))

    workers = worker_count()
    if workers == 1:
        return [make(i) for i in range(scfg.n_scenes)]
    with ThreadPoolExecutor(workers) as pool:
        return list(pool.map(make, range(scfg.n_scenes)))


def dataset_summary(scenes: list[Scene]) -> dict:
    n_pos = [int(s.labels.sum()) for s in scenes]
    return {
        "n_scenes": len(scenes),
        "positives_per_scene": float(np.mean(n_pos)) if scenes else 0.0,
        "all_negative_fraction": float(np.mean([p == 0 for p in n_pos])) if scenes else 0.0,
        "positive_rate": float(np.sum(n_pos) / (len(scenes) * len(scenes[0].proposals))) if scenes else 0.0,
        "split_sizes": [sum(1 for s in scenes if s.split == k) for k in (1, 2, 3)],
    }
