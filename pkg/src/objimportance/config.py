"""Run configuration and the flat ``key = value`` config file format."""
from __future__ import annotations

import dataclasses
import hashlib
from dataclasses import dataclass, fields
from pathlib import Path


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    # architecture
    n_proposals: int = 40
    channels: int = 16
    edge_dim: int = 0  # 0 means "same as channels"
    pool_size: int = 7
    frames: int = 2
    height: int = 16
    width: int = 16
    mlp_hidden: tuple[int, ...] = (128, 32)
    mlp_init: str = "glorot"
    no_graph: bool = False
    no_global_descriptor: bool = False
    no_self_attention: bool = False
    # optimization
    lr: float = 0.0003
    momentum: float = 0.9
    decay: float = 0.0001
    l2: float = 0.0005
    batch_size: int = 8
    epochs: int = 30
    seed: int = 0
    mode: str = "cv"  # "cv": 3 folds, "single": train on every split

    def __post_init__(self):
        self.mlp_hidden = tuple(int(h) for h in self.mlp_hidden)
        for name in ("n_proposals", "channels", "pool_size", "frames", "height", "width", "batch_size"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive")
        if self.edge_dim < 0 or self.epochs < 0:
            raise ConfigError("edge_dim and epochs must be non-negative")
        if any(h < 1 for h in self.mlp_hidden):
            raise ConfigError("MLP hidden sizes must be positive")
        if self.lr <= 0 or self.momentum < 0 or self.decay < 0 or self.l2 < 0:
            raise ConfigError("lr must be positive; momentum, decay and l2 non-negative")
        if self.mlp_init not in ("glorot", "zeros"):
            raise ConfigError(f"mlp_init must be 'glorot' or 'zeros', got {self.mlp_init!r}")
        if self.mode not in ("cv", "single"):
            raise ConfigError(f"mode must be 'cv' or 'single', got {self.mode!r}")

    @property
    def d(self) -> int:
        return self.edge_dim or self.channels

    @property
    def mlp_in(self) -> int:
        return self.channels if self.no_global_descriptor else 2 * self.channels

    def replace(self, **kw) -> "RunConfig":
        return dataclasses.replace(self, **kw)


# keys that determine parameter shapes and the forward graph
ARCH_KEYS = (
    "n_proposals", "channels", "edge_dim", "pool_size", "frames", "height", "width",
    "mlp_hidden", "no_graph", "no_global_descriptor", "no_self_attention",
)


def _format(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ",".join(str(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _parse(raw: str, default):
    raw = raw.strip()
    if isinstance(default, bool):
        low = raw.lower()
        if low in ("true", "1", "yes"):
            return True
        if low in ("false", "0", "no"):
            return False
        raise ConfigError(f"not a boolean: {raw!r}")
    if isinstance(default, tuple):
        return tuple(int(x) for x in raw.split(",") if x.strip())
    if isinstance(default, int):
        return int(raw)
    if isinstance(default, float):
        return float(raw)
    return raw


def dump_config(obj) -> str:
    return "".join(f"{f.name} = {_format(getattr(obj, f.name))}\n" for f in fields(obj))


def arch_hash(cfg: RunConfig) -> bytes:
    text = "".join(f"{k}={_format(getattr(cfg, k))};" for k in ARCH_KEYS)
    return hashlib.sha256(text.encode()).digest()


def parse_pairs(text: str) -> dict[str, str]:
    pairs = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        if key in pairs:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        pairs[key] = value
    return pairs


def build(cls, pairs: dict[str, str], strict: bool = True):
    """Instantiate dataclass ``cls`` from string pairs; unknown keys raise when ``strict``."""
    known = {f.name: f for f in fields(cls)}
    unknown = sorted(set(pairs) - set(known))
    if strict and unknown:
        raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
    defaults = cls()
    kwargs = {}
    for k, v in pairs.items():
        if k in known:
            try:
                kwargs[k] = _parse(v, getattr(defaults, k))
            except ValueError as exc:
                raise ConfigError(f"bad value for {k}: {exc}") from None
    return cls(**kwargs)


def load_config(path: str | Path, *extra_classes):
    """Read a config file into a ``RunConfig`` plus any extra dataclasses sharing the file.

    A key must belong to at least one of the classes.
    """
    pairs = parse_pairs(Path(path).read_text())
    classes = (RunConfig,) + extra_classes
    known = set()
    for cls in classes:
        known.update(f.name for f in fields(cls))
    unknown = sorted(set(pairs) - known)
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
    out = []
    for cls in classes:
        names = {f.name for f in fields(cls)}
        out.append(build(cls, {k: v for k, v in pairs.items() if k in names}))
    return out[0] if len(out) == 1 else tuple(out)
