"""Embedding pre-training, pair sampling, hinge loss and the epoch loop."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.sparse as sp

from . import ndcore as nd
from .config import Config
from .graph import InteractionTensor, build_normalized_adjacency
from .model import as_tensors, forward_states, init_params, score
from .ndcore import Tensor
from .sampler import SubGraph, sample_subgraph, select_seeds

log = logging.getLogger(__name__)


class TrainingError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# initial embeddings


def interaction_rows(t: InteractionTensor, side: str) -> sp.csr_matrix:
    """Binary rows of length K * (other side's size), one per user or item."""
    if side == "user":
        rows, cols, width = t.users, t.behaviors * t.num_items + t.items, t.num_items
        n = t.num_users
    else:
        rows, cols, width = t.items, t.behaviors * t.num_users + t.users, t.num_users
        n = t.num_items
    return sp.csr_matrix((np.ones(len(rows)), (rows, cols)), shape=(n, t.num_behaviors * width))


def train_autoencoder(x: sp.csr_matrix, dim: int, epochs: int = 50, learning_rate: float = 1e-2,
                      rng=None) -> tuple[np.ndarray, list[float]]:
    """Tied-weight autoencoder ``h = relu(A x)``, ``x' = A^T h``.

    The squared reconstruction error is expanded as
    ``|hA|^2 - 2<hA, x> + |x|^2`` so the dense reconstruction is never formed.
    Returns the codes after training and the per-epoch loss history.
    """
    rng = np.random.default_rng(rng)
    x = sp.csr_matrix(x, dtype=float)
    width = x.shape[1]
    weights = {"A": rng.uniform(-1, 1, (dim, width)) * np.sqrt(6.0 / (dim + width))}
    opt = nd.Adam(learning_rate=learning_rate)
    const = float(x.multiply(x).sum())
    history = []
    for _ in range(epochs):
        with nd.Tape() as tape:
            a = tape.watch(weights["A"], "A")
            h = nd.relu(nd.spmm(x, nd.transpose(a)))
            gram_h = nd.einsum("nd,ne->de", h, h)
            gram_a = nd.einsum("dj,ej->de", a, a)
            cross = nd.sum(h * nd.spmm(x, nd.transpose(a)))
            loss = nd.sum(gram_h * gram_a) - 2.0 * cross + const
            grads = tape.backward(loss)
        history.append(float(loss.data))
        opt.step(weights, grads)
    codes = np.maximum(np.asarray(x @ weights["A"].T), 0.0)
    return codes, history


def pretrain_embeddings(t: InteractionTensor, dim: int, mode: str = "random", rng=None,
                        epochs: int = 50, learning_rate: float = 1e-2) -> tuple[np.ndarray, np.ndarray]:
    """Initial user and item embeddings (``random`` or ``autoencoder``)."""
    if dim < 1:
        raise nd.ContractError("dim must be >= 1")
    rng = np.random.default_rng(rng)
    if mode == "random":
        bound = np.sqrt(6.0 / dim)
        return (rng.uniform(-bound, bound, (t.num_users, dim)),
                rng.uniform(-bound, bound, (t.num_items, dim)))
    if mode == "autoencoder":
        users, _ = train_autoencoder(interaction_rows(t, "user"), dim, epochs, learning_rate, rng)
        items, _ = train_autoencoder(interaction_rows(t, "item"), dim, epochs, learning_rate, rng)
        return users, items
    raise nd.ContractError(f"unknown init mode {mode!r}")


# ---------------------------------------------------------------------------
# pairs and loss


def sample_pairs(sub: SubGraph, user: int, samples: int, rng, target: int) -> np.ndarray:
    """(positive, negative) local item pairs for local ``user``; empty if none possible."""
    a = sub.tensor.adjacency(target)
    pos = a.indices[a.indptr[user]:a.indptr[user + 1]]
    if len(pos) == 0:
        return np.zeros((0, 2), dtype=np.int64)
    mask = np.ones(sub.num_items, dtype=bool)
    mask[pos] = False
    neg = np.flatnonzero(mask)
    if len(neg) == 0:
        return np.zeros((0, 2), dtype=np.int64)
    p = rng.choice(pos, size=samples, replace=len(pos) < samples)
    n = rng.choice(neg, size=samples, replace=True)
    return np.stack([p, n], axis=1).astype(np.int64)


def hinge(pos: Tensor, neg: Tensor) -> Tensor:
    return nd.relu(1.0 - pos + neg)


def compute_loss(pos: Tensor, neg: Tensor, params: list[Tensor], weight_decay: float) -> Tensor:
    """Summed pairwise hinge plus ``weight_decay * |params|_F^2``."""
    loss = nd.sum(hinge(pos, neg))
    if weight_decay:
        reg = nd.sum(nd.stack([nd.sumsq(p) for p in params]))
        loss = loss + weight_decay * reg
    return loss


# ---------------------------------------------------------------------------
# training loop


@dataclass
class EpochLog:
    epoch: int
    loss: float
    hinge: float  # mean hinge per sampled pair
    pairs: int
    sub_users: int
    sub_items: int


@dataclass
class TrainResult:
    params: dict[str, np.ndarray]
    history: list[EpochLog] = field(default_factory=list)


def epoch_rng(seed: int, epoch: int) -> np.random.Generator:
    return np.random.default_rng([seed, epoch])


def training_users(sub: SubGraph, target: int) -> np.ndarray:
    a = sub.tensor.adjacency(target)
    deg = np.diff(a.indptr)
    return np.flatnonzero((deg > 0) & (deg < sub.num_items))


def _check_finite(params, grads, loss):
    if np.isfinite(loss):
        return
    bad = [k for k, v in params.items() if not np.all(np.isfinite(v))]
    bad += [f"d/d{k}" for k, v in grads.items() if not np.all(np.isfinite(v))]
    where = ", ".join(bad) if bad else "no parameter is itself non-finite"
    raise TrainingError(f"non-finite loss {loss}; offending arrays: {where}")


def train_step(params: dict[str, np.ndarray], opt: nd.Adam, sub: SubGraph, pairs_by_user,
               cfg: Config) -> tuple[float, float, int]:
    """One Adam step on a batch; returns (loss, summed hinge, pair count)."""
    users = np.concatenate([np.full(len(p), u) for u, p in pairs_by_user])
    pairs = np.concatenate([p for _, p in pairs_by_user])
    with nd.Tape() as tape:
        tensors = as_tensors(params, tape)
        states = forward_states(tensors, sub, cfg)
        pos, _ = score(tensors, states, users, pairs[:, 0], cfg)
        neg, _ = score(tensors, states, users, pairs[:, 1], cfg)
        loss = compute_loss(pos, neg, list(tensors.values()), cfg.weight_decay)
        grads = tape.backward(loss)
    h = float(np.sum(np.maximum(1.0 - pos.data + neg.data, 0.0)))
    _check_finite(params, grads, float(loss.data))
    opt.step(params, grads)
    return float(loss.data), h, len(pairs)


def train(t: InteractionTensor, cfg: Config, target: int, params: dict[str, np.ndarray] | None = None,
          on_epoch: Callable[[EpochLog], None] | None = None) -> TrainResult:
    """Seed -> sample sub-graph -> mini-batch hinge training, once per epoch."""
    rng = np.random.default_rng(cfg.seed)
    if params is None:
        base_u, base_i = pretrain_embeddings(t, cfg.dim, cfg.init_mode, rng,
                                             cfg.pretrain_epochs, cfg.pretrain_learning_rate)
        params = init_params(cfg, t.num_users, t.num_items, t.num_behaviors, rng, base_u, base_i)
    else:
        params = {k: np.array(v) for k, v in params.items()}
    adj = build_normalized_adjacency(t)
    opt = nd.Adam(learning_rate=cfg.learning_rate)
    result = TrainResult(params)
    for epoch in range(cfg.epochs):
        erng = epoch_rng(cfg.seed, epoch)
        seed_u, seed_i = select_seeds(t, cfg.seed_count, erng)
        sub = sample_subgraph(t, adj, seed_u, seed_i, cfg.sample_depth, cfg.sample_per_step, erng)
        users = training_users(sub, target)
        erng.shuffle(users)
        total, hinge_sum, npairs = 0.0, 0.0, 0
        for s in range(0, len(users), cfg.batch_size):
            batch = []
            for u in users[s:s + cfg.batch_size]:
                p = sample_pairs(sub, int(u), cfg.samples_per_user, erng, target)
                if len(p):
                    batch.append((int(u), p))
            if not batch:
                continue
            loss, h, n = train_step(params, opt, sub, batch, cfg)
            total += loss
            hinge_sum += h
            npairs += n
        entry = EpochLog(epoch, total, hinge_sum / max(npairs, 1), npairs, sub.num_users, sub.num_items)
        result.history.append(entry)
        log.debug("epoch %d loss %.6f hinge %.6f pairs %d", epoch, total, entry.hinge, npairs)
        if on_epoch is not None:
            on_epoch(entry)
    return result
