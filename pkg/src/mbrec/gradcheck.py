"""Finite-difference checks of tape gradients."""
from __future__ import annotations

from typing import Callable

import numpy as np

from . import ndcore as nd
from .config import Config
from .graph import InteractionTensor
from .model import as_tensors, forward_states, init_params, score
from .sampler import full_graph
from .trainer import compute_loss


def central_difference(f: Callable[[], float], arr: np.ndarray, h: float = 1e-6) -> np.ndarray:
    """Gradient of ``f`` wrt ``arr`` (perturbed in place and restored)."""
    g = np.zeros_like(arr, dtype=float)
    flat, gf = arr.reshape(-1), g.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + h
        up = f()
        flat[i] = old - h
        down = f()
        flat[i] = old
        gf[i] = (up - down) / (2 * h)
    return g


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-7) -> float:
    """Max-norm error scaled by the larger gradient magnitude (floored)."""
    scale = max(np.abs(analytic).max(initial=0.0), np.abs(numeric).max(initial=0.0), floor)
    return float(np.abs(analytic - numeric).max(initial=0.0) / scale)


def randomized_params(cfg: Config, t: InteractionTensor, seed: int) -> dict[str, np.ndarray]:
    """Initial parameters with biases also drawn at random (keeps ReLUs off their kinks)."""
    rng = np.random.default_rng(seed)
    params = init_params(cfg, t.num_users, t.num_items, t.num_behaviors, rng)
    for k, v in params.items():
        if k.endswith(("_b", "_b1", "_b2", ".b3")):
            params[k] = v + rng.uniform(-0.5, 0.5, v.shape)
    return params


def model_loss_fn(params, t: InteractionTensor, users, pos, neg, cfg: Config):
    """Closure computing the pairwise hinge loss (plus decay) without a tape."""
    sub = full_graph(t)

    def f() -> float:
        tensors = as_tensors(params)
        states = forward_states(tensors, sub, cfg)
        sp_, _ = score(tensors, states, users, pos, cfg)
        sn, _ = score(tensors, states, users, neg, cfg)
        return float(compute_loss(sp_, sn, list(tensors.values()), cfg.weight_decay).data)

    return f


def model_gradients(params, t: InteractionTensor, users, pos, neg, cfg: Config) -> dict[str, np.ndarray]:
    sub = full_graph(t)
    with nd.Tape() as tape:
        tensors = as_tensors(params, tape)
        states = forward_states(tensors, sub, cfg)
        sp_, _ = score(tensors, states, users, pos, cfg)
        sn, _ = score(tensors, states, users, neg, cfg)
        loss = compute_loss(sp_, sn, list(tensors.values()), cfg.weight_decay)
        return tape.backward(loss)


def check_model(t: InteractionTensor, cfg: Config, seed: int = 0, pairs: int = 16,
                h: float = 1e-6) -> dict[str, float]:
    """Relative gradient error for every parameter array of the full loss."""
    rng = np.random.default_rng(seed)
    params = randomized_params(cfg, t, seed)
    users = rng.integers(0, t.num_users, pairs)
    pos = rng.integers(0, t.num_items, pairs)
    neg = rng.integers(0, t.num_items, pairs)
    analytic = model_gradients(params, t, users, pos, neg, cfg)
    f = model_loss_fn(params, t, users, pos, neg, cfg)
    return {k: relative_error(analytic[k], central_difference(f, params[k], h)) for k in params}
