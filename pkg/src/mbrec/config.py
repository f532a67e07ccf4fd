"""Run configuration: a flat set of typed keys read from ``key = value`` text."""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from pathlib import Path


class ConfigError(ValueError):
    pass


@dataclass
class Config:
    # data
    behaviors: tuple[str, ...] = ("view", "cart", "buy")
    target_behavior: str = "buy"
    # encoder / fusion
    dim: int = 16
    channels: int = 8
    heads: int = 2
    layers: int = 2
    agg_hidden: int = 0  # 0 means "same as dim"
    share_sides: bool = False
    mean_pool: bool = False
    norm_epsilon: float = 1e-12
    precision: str = "float64"
    # training
    epochs: int = 50
    samples_per_user: int = 1
    weight_decay: float = 0.01
    learning_rate: float = 1e-3
    batch_size: int = 32
    seed: int = 0
    init_mode: str = "random"
    pretrain_epochs: int = 50
    pretrain_learning_rate: float = 1e-2
    # sampler
    sample_depth: int = 2
    sample_per_step: int = 5000
    seed_count: int = 1000
    # evaluation
    negatives: int = 99
    topn: tuple[int, ...] = (10,)
    eval_node_cap: int = 60000
    threads: int = 0

    def __post_init__(self):
        self.validate()

    @property
    def hidden(self) -> int:
        return self.agg_hidden or self.dim

    @property
    def dtype(self):
        import numpy as np
        return np.float32 if self.precision == "float32" else np.float64

    def validate(self) -> None:
        if self.dim < 1 or self.channels < 1 or self.heads < 1 or self.layers < 1:
            raise ConfigError("dim, channels, heads and layers must be >= 1")
        if self.dim % self.heads:
            raise ConfigError(f"dim {self.dim} is not divisible by heads {self.heads}")
        if self.epochs < 1 or self.samples_per_user < 1 or self.batch_size < 1:
            raise ConfigError("epochs, samples_per_user and batch_size must be >= 1")
        if self.weight_decay < 0:
            raise ConfigError("weight_decay must be >= 0")
        if self.init_mode not in ("random", "autoencoder"):
            raise ConfigError(f"init_mode must be random or autoencoder, got {self.init_mode!r}")
        if self.precision not in ("float64", "float32"):
            raise ConfigError(f"precision must be float64 or float32, got {self.precision!r}")
        if len(set(self.behaviors)) != len(self.behaviors):
            raise ConfigError(f"duplicate behavior names in {self.behaviors}")
        if self.target_behavior not in self.behaviors:
            raise ConfigError(f"target behavior {self.target_behavior!r} not in {list(self.behaviors)}")
        if self.sample_depth < 0 or self.sample_per_step < 1 or self.seed_count < 1:
            raise ConfigError("sampler needs depth >= 0, per-step >= 1, seed count >= 1")

    def replace(self, **changes) -> "Config":
        return dataclasses.replace(self, **changes)

    def to_text(self) -> str:
        lines = []
        for f in dataclasses.fields(self):
            v = getattr(self, f.name)
            if isinstance(v, tuple):
                v = ",".join(str(x) for x in v)
            elif isinstance(v, bool):
                v = "true" if v else "false"
            lines.append(f"{f.name} = {v}")
        return "\n".join(lines) + "\n"

    def as_dict(self) -> dict:
        return dataclasses.asdict(self)


_FIELDS = {f.name: f for f in dataclasses.fields(Config)}


def _coerce(name: str, raw: str):
    default = getattr(Config(), name)
    raw = raw.strip()
    try:
        if isinstance(default, bool):
            if raw.lower() in ("1", "true", "yes", "on"):
                return True
            if raw.lower() in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        if isinstance(default, tuple):
            parts = [p.strip() for p in raw.split(",") if p.strip()]
            if default and isinstance(default[0], int):
                return tuple(int(p) for p in parts)
            return tuple(parts)
    except ValueError:
        raise ConfigError(f"bad value for {name}: {raw!r}") from None
    return raw


def parse_config(text: str, base: Config | None = None) -> Config:
    values = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, raw = (s.strip() for s in line.split("=", 1))
        if key not in _FIELDS:
            raise ConfigError(f"line {lineno}: unknown configuration key {key!r}")
        values[key] = _coerce(key, raw)
    return dataclasses.replace(base or Config(), **values)


def load_config(path, base: Config | None = None) -> Config:
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"config file not found: {p}")
    return parse_config(p.read_text(encoding="utf-8"), base)


def override(cfg: Config, raw: dict[str, str]) -> Config:
    """Apply string overrides (e.g. from command-line flags)."""
    values = {}
    for key, v in raw.items():
        if key not in _FIELDS:
            raise ConfigError(f"unknown configuration key {key!r}")
        values[key] = _coerce(key, str(v))
    return dataclasses.replace(cfg, **values)


def field_names() -> list[str]:
    return list(_FIELDS)
