"""Binary weight and dataset files.

Both formats are little-endian throughout.

Weight file::

    magic   4s   b"OIWT"
    version u16
    hash    32s  sha256 of the architecture keys of the embedded config
    cfg_len u32, cfg utf-8 ``key = value`` text
    count   u32
    count x { name_len u16, name utf-8, ndim u8, dims u32 * ndim, values f64 * prod(dims) }

Dataset file::

    magic   4s   b"OIDS"
    version u16
    n_scenes, T, H, W, C, N   u32 each
    n_scenes x {
        split u8, seed i64, index u32, lane_center f64, n_objects u32,
        n_objects x { kind u8, detected u8, x1 y1 x2 y2 depth vx f64 }
        grid    f64 * T*H*W*C   (row-major T, H, W, C)
        train proposals  N x { x1 y1 x2 y2 f64, is_dummy u8, label u8 }
        test proposals   N x { same }
    }
"""
from __future__ import annotations

import io
import struct
from pathlib import Path

import numpy as np

from .config import RunConfig, arch_hash, build, dump_config, parse_pairs
from .geometry import BBox, Proposal
from .scenes import Scene, SceneObject

WEIGHT_MAGIC = b"OIWT"
DATASET_MAGIC = b"OIDS"
VERSION = 1

PROPOSAL_DTYPE = np.dtype([("box", "<f8", (4,)), ("is_dummy", "u1"), ("label", "u1")])
OBJECT_DTYPE = np.dtype([("kind", "u1"), ("detected", "u1"), ("box", "<f8", (4,)), ("depth", "<f8"), ("vx", "<f8")])


class FormatError(ValueError):
    pass


class ConfigMismatch(ValueError):
    pass


def _read_exact(f, n: int) -> bytes:
    data = f.read(n)
    if len(data) != n:
        raise FormatError(f"truncated file: wanted {n} bytes, got {len(data)}")
    return data


def _unpack(f, fmt: str):
    return struct.unpack(fmt, _read_exact(f, struct.calcsize(fmt)))


# -- weights ----------------------------------------------------------------

def weights_bytes(params: dict, cfg: RunConfig) -> bytes:
    out = io.BytesIO()
    text = dump_config(cfg).encode()
    out.write(struct.pack("<4sH32sI", WEIGHT_MAGIC, VERSION, arch_hash(cfg), len(text)))
    out.write(text)
    out.write(struct.pack("<I", len(params)))
    for name, arr in params.items():
        arr = np.ascontiguousarray(arr, dtype="<f8")
        raw = name.encode()
        out.write(struct.pack(f"<H{len(raw)}sB", len(raw), raw, arr.ndim))
        out.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        out.write(arr.tobytes())
    return out.getvalue()


def save_weights(path: str | Path, params: dict, cfg: RunConfig) -> None:
    Path(path).write_bytes(weights_bytes(params, cfg))


def load_weights(path: str | Path) -> tuple[RunConfig, dict]:
    with open(path, "rb") as f:
        magic, version, digest, cfg_len = _unpack(f, "<4sH32sI")
        if magic != WEIGHT_MAGIC:
            raise FormatError(f"{path}: not a weight file")
        if version != VERSION:
            raise FormatError(f"{path}: unsupported weight file version {version}")
        cfg = build(RunConfig, parse_pairs(_read_exact(f, cfg_len).decode()))
        if arch_hash(cfg) != digest:
            raise ConfigMismatch(f"{path}: config hash does not match the embedded configuration")
        (count,) = _unpack(f, "<I")
        params = {}
        for _ in range(count):
            (n,) = _unpack(f, "<H")
            name = _read_exact(f, n).decode()
            (ndim,) = _unpack(f, "<B")
            shape = _unpack(f, f"<{ndim}I")
            size = int(np.prod(shape))
            params[name] = np.frombuffer(_read_exact(f, 8 * size), dtype="<f8").reshape(shape).astype(np.float64)
        if f.read(1):
            raise FormatError(f"{path}: trailing bytes after the last record")
    return cfg, params


# -- datasets ---------------------------------------------------------------

def _proposal_records(props: list[Proposal]) -> bytes:
    rec = np.zeros(len(props), dtype=PROPOSAL_DTYPE)
    rec["box"] = [p.box.as_tuple() for p in props]
    rec["is_dummy"] = [p.is_dummy for p in props]
    rec["label"] = [p.label for p in props]
    return rec.tobytes()


def _proposals_from(raw: bytes) -> list[Proposal]:
    rec = np.frombuffer(raw, dtype=PROPOSAL_DTYPE)
    return [Proposal(BBox(*map(float, r["box"])), bool(r["is_dummy"]), int(r["label"])) for r in rec]


def dataset_bytes(scenes: list[Scene]) -> bytes:
    if not scenes:
        raise ValueError("cannot write an empty dataset")
    T, H, W, C = scenes[0].grid.shape
    N = len(scenes[0].proposals)
    out = io.BytesIO()
    out.write(struct.pack("<4sH6I", DATASET_MAGIC, VERSION, len(scenes), T, H, W, C, N))
    for s in scenes:
        if s.grid.shape != (T, H, W, C) or len(s.proposals) != N or len(s.test_proposals) != N:
            raise ValueError(f"scene {s.index} does not match the dataset dimensions")
        out.write(struct.pack("<BqIdI", s.split, s.seed, s.index, s.lane_center, len(s.objects)))
        objs = np.zeros(len(s.objects), dtype=OBJECT_DTYPE)
        for i, o in enumerate(s.objects):
            objs[i] = (o.kind, o.detected, o.box.as_tuple(), o.depth, o.vx)
        out.write(objs.tobytes())
        out.write(np.ascontiguousarray(s.grid, dtype="<f8").tobytes())
        out.write(_proposal_records(s.proposals))
        out.write(_proposal_records(s.test_proposals))
    return out.getvalue()


def save_dataset(path: str | Path, scenes: list[Scene]) -> None:
    Path(path).write_bytes(dataset_bytes(scenes))


def dataset_dims(path: str | Path) -> dict:
    with open(path, "rb") as f:
        magic, version, n, T, H, W, C, N = _unpack(f, "<4sH6I")
    if magic != DATASET_MAGIC:
        raise FormatError(f"{path}: not a dataset file")
    return {"n_scenes": n, "frames": T, "height": H, "width": W, "channels": C, "n_proposals": N}


def load_dataset(path: str | Path) -> list[Scene]:
    scenes = []
    with open(path, "rb") as f:
        magic, version, n, T, H, W, C, N = _unpack(f, "<4sH6I")
        if magic != DATASET_MAGIC:
            raise FormatError(f"{path}: not a dataset file")
        if version != VERSION:
            raise FormatError(f"{path}: unsupported dataset version {version}")
        for _ in range(n):
            split, seed, index, lane_center, n_obj = _unpack(f, "<BqIdI")
            objs = np.frombuffer(_read_exact(f, n_obj * OBJECT_DTYPE.itemsize), dtype=OBJECT_DTYPE)
            objects = [SceneObject(int(o["kind"]), BBox(*map(float, o["box"])), float(o["depth"]),
                                   float(o["vx"]), bool(o["detected"])) for o in objs]
            grid = np.frombuffer(_read_exact(f, 8 * T * H * W * C), dtype="<f8").reshape(T, H, W, C).astype(np.float64)
            train = _proposals_from(_read_exact(f, N * PROPOSAL_DTYPE.itemsize))
            test = _proposals_from(_read_exact(f, N * PROPOSAL_DTYPE.itemsize))
            scenes.append(Scene(grid, train, test, split, seed, index, lane_center, objects))
        if f.read(1):
            raise FormatError(f"{path}: trailing bytes after the last scene")
    return scenes


def check_compatible(cfg: RunConfig, dims: dict) -> None:
    for key in ("frames", "height", "width", "channels", "n_proposals"):
        if getattr(cfg, key) != dims[key]:
            raise ConfigMismatch(f"{key}: weights/config say {getattr(cfg, key)}, dataset has {dims[key]}")
