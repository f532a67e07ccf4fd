"""Parameter layout, initialization and the full scoring path."""
from __future__ import annotations

import numpy as np

from . import ndcore as nd
from .config import Config
from .encoder import SIDES, NodeStates, encode, side_prefix
from .fusion import score_pairs
from .ndcore import Tensor
from .sampler import SubGraph


def glorot(rng: np.random.Generator, shape, fan_in: int, fan_out: int) -> np.ndarray:
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=shape)


def layer_param_shapes(cfg: Config, num_behaviors: int) -> dict[str, tuple[tuple[int, ...], tuple[int, int] | float]]:
    """name suffix -> (shape, (fan_in, fan_out) or constant fill)."""
    d, m, h, k = cfg.dim, cfg.channels, cfg.hidden, num_behaviors
    return {
        "channels": ((k, m, d, d), (d, d)),
        "gate_w": ((k, m, d), (d, m)),
        "gate_b": ((k, m), 0.1),
        "query": ((d, d), (d, d)),
        "key": ((d, d), (d, d)),
        "value": ((d, d), (d, d)),
        "agg_w1": ((h, d), (d, h)),
        "agg_b1": ((h,), 0.0),
        "agg_w2": ((h,), (h, 1)),
        "agg_b2": ((1,), 0.0),
    }


def init_params(cfg: Config, num_users: int, num_items: int, num_behaviors: int, rng=None,
                base_users: np.ndarray | None = None,
                base_items: np.ndarray | None = None) -> dict[str, np.ndarray]:
    """All trainable arrays, in a fixed order. Base embeddings default to U(+-sqrt(6/d))."""
    rng = np.random.default_rng(rng)
    d = cfg.dim
    params: dict[str, np.ndarray] = {}
    bound = np.sqrt(6.0 / d)
    params["embed.user"] = rng.uniform(-bound, bound, (num_users, d)) if base_users is None else np.array(base_users, dtype=float)
    params["embed.item"] = rng.uniform(-bound, bound, (num_items, d)) if base_items is None else np.array(base_items, dtype=float)
    shapes = layer_param_shapes(cfg, num_behaviors)
    for layer in range(cfg.layers):
        prefixes = {side_prefix(layer, s, cfg.share_sides) for s in SIDES}
        for prefix in sorted(prefixes, key=lambda p: ("user", "shared", "item").index(p.split(".")[1])):
            for name, (shape, init) in shapes.items():
                if isinstance(init, tuple):
                    params[f"{prefix}.{name}"] = glorot(rng, shape, *init)
                else:
                    params[f"{prefix}.{name}"] = np.full(shape, init)
    params["fusion.key"] = glorot(rng, (d, d), d, d)
    params["fusion.value"] = glorot(rng, (d, d), d, d)
    params["fusion.w3"] = glorot(rng, (d, d), d, d)
    params["fusion.b3"] = np.zeros(d)
    params["fusion.w4"] = glorot(rng, (d,), d, 1)
    dtype = cfg.dtype
    return {k: v.astype(dtype) for k, v in params.items()}


def as_tensors(params: dict[str, np.ndarray], tape: nd.Tape | None = None) -> dict[str, Tensor]:
    if tape is None:
        return {k: Tensor(v) for k, v in params.items()}
    return {k: tape.watch(v, k) for k, v in params.items()}


def forward_states(tensors: dict[str, Tensor], sub: SubGraph, cfg: Config) -> NodeStates:
    """Encode the sub-graph starting from the base embeddings of its nodes."""
    base_u = tensors["embed.user"][sub.users]
    base_i = tensors["embed.item"][sub.items]
    return encode(base_u, base_i, sub, tensors, cfg.layers, cfg.heads, cfg.share_sides, cfg.mean_pool)


def score(tensors: dict[str, Tensor], states: NodeStates, users, items, cfg: Config):
    """Scores for local (user, item) index pairs; see :func:`fusion.score_pairs`."""
    return score_pairs(states.users, states.items, users, items, tensors, cfg.heads, cfg.norm_epsilon)


def score_matrix(params: dict[str, np.ndarray], sub: SubGraph, users, items, cfg: Config,
                 chunk: int = 4096) -> np.ndarray:
    """Inference-only scores for local pairs, computed in chunks."""
    tensors = as_tensors(params)
    states = forward_states(tensors, sub, cfg)
    users = np.asarray(users, dtype=np.int64)
    items = np.asarray(items, dtype=np.int64)
    out = np.empty(len(users))
    for s in range(0, len(users), chunk):
        sc, _ = score(tensors, states, users[s:s + chunk], items[s:s + chunk], cfg)
        out[s:s + chunk] = sc.data
    return out


def model_config_from_params(params: dict[str, np.ndarray], cfg: Config) -> Config:
    """Check a checkpoint against ``cfg`` and return ``cfg`` (raises on mismatch)."""
    d = params["embed.user"].shape[1]
    layers = len({k.split(".")[0] for k in params if k.startswith("layer")})
    if d != cfg.dim or layers != cfg.layers:
        raise nd.ContractError(
            f"checkpoint has dim={d}, layers={layers}; configuration says dim={cfg.dim}, layers={cfg.layers}")
    return cfg
