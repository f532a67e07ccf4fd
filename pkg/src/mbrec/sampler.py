"""Neighborhood-weighted sub-graph sampling."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .graph import InteractionTensor
from .ndcore import ContractError


@dataclass
class SubGraph:
    users: np.ndarray  # original indices, sorted
    items: np.ndarray
    tensor: InteractionTensor  # local indices, |users| x |items| x K

    @property
    def num_users(self) -> int:
        return len(self.users)

    @property
    def num_items(self) -> int:
        return len(self.items)

    def local_users(self, users) -> np.ndarray:
        return _localize(self.users, users, "user")

    def local_items(self, items) -> np.ndarray:
        return _localize(self.items, items, "item")


def _localize(pool: np.ndarray, idx, what: str) -> np.ndarray:
    idx = np.atleast_1d(np.asarray(idx, dtype=np.int64))
    pos = np.searchsorted(pool, idx)
    ok = (pos < len(pool)) & (pool[np.minimum(pos, len(pool) - 1)] == idx) if len(pool) else np.zeros(len(idx), bool)
    if not np.all(ok):
        raise ContractError(f"{what} index {idx[~ok][0]} is not inside the sub-graph")
    return pos


def restrict(t: InteractionTensor, users, items) -> SubGraph:
    """Induced sub-tensor on ``users`` x ``items`` (both re-sorted)."""
    users = np.unique(np.asarray(users, dtype=np.int64))
    items = np.unique(np.asarray(items, dtype=np.int64))
    umap = np.full(t.num_users, -1)
    umap[users] = np.arange(len(users))
    imap = np.full(t.num_items, -1)
    imap[items] = np.arange(len(items))
    m = (umap[t.users] >= 0) & (imap[t.items] >= 0)
    local = InteractionTensor(len(users), len(items), t.num_behaviors,
                              umap[t.users[m]], imap[t.items[m]], t.behaviors[m], t.order[m], t.seq[m])
    return SubGraph(users, items, local)


def full_graph(t: InteractionTensor) -> SubGraph:
    return SubGraph(np.arange(t.num_users), np.arange(t.num_items), t)


@dataclass
class SamplingWeights:
    user: np.ndarray
    item: np.ndarray

    @staticmethod
    def distribution(p: np.ndarray, candidates: np.ndarray) -> np.ndarray:
        """Squared-and-normalized weights over ``candidates`` (zeros if all weights vanish)."""
        w = p[candidates] ** 2
        total = w.sum()
        return w / total if total > 0 else w


def _draw(rng: np.random.Generator, p: np.ndarray, sampled: np.ndarray, n: int) -> np.ndarray:
    """Draw up to ``n`` unsampled indices, sequentially, proportional to ``p**2``.

    Uses exponential race keys (``-log(1 - u) / w``), which yields exactly the law of
    sequential draws with renormalization. Zero-weight candidates are only
    taken once positive ones run out, uniformly at random.
    """
    cand = np.flatnonzero(~sampled)
    if n <= 0 or len(cand) == 0:
        return cand[:0]
    w = SamplingWeights.distribution(p, cand)
    u = rng.random(len(cand))
    e = -np.log1p(-u)
    with np.errstate(divide="ignore"):
        keys = np.where(w > 0, e / np.where(w > 0, w, 1.0), np.inf)
    # zero-weight candidates: uniform order among themselves, after all positives
    tie = rng.random(len(cand))
    order = np.lexsort((tie, keys))
    return cand[order[:n]]


def sample_subgraph(t: InteractionTensor, adj: sp.csr_matrix, seed_users, seed_items,
                    depth: int = 2, per_step: int = 5000, rng=None) -> SubGraph:
    """Grow a sub-graph from seed nodes by weighted neighborhood sampling.

    A sampled user's normalized adjacency row raises the weights of its items;
    a sampled item's column raises the weights of its users.
    """
    if depth < 0 or per_step < 1:
        raise ContractError(f"need depth >= 0 and per_step >= 1, got {depth}, {per_step}")
    seed_users = np.unique(np.asarray(seed_users, dtype=np.int64))
    seed_items = np.unique(np.asarray(seed_items, dtype=np.int64))
    if len(seed_users) == 0 and len(seed_items) == 0:
        raise ContractError("sample_subgraph needs at least one seed node")
    rng = np.random.default_rng(rng)
    adj = sp.csr_matrix(adj)
    adj_t = adj.T.tocsr()

    su = np.zeros(t.num_users, dtype=bool)
    si = np.zeros(t.num_items, dtype=bool)
    su[seed_users] = True
    si[seed_items] = True
    weights = SamplingWeights(np.zeros(t.num_users), np.zeros(t.num_items))
    weights.item += np.asarray(adj[seed_users].sum(axis=0)).ravel()
    weights.user += np.asarray(adj_t[seed_items].sum(axis=0)).ravel()

    for _ in range(depth):
        new_u = _draw(rng, weights.user, su, per_step)
        new_i = _draw(rng, weights.item, si, per_step)
        su[new_u] = True
        si[new_i] = True
        if len(new_u):
            weights.item += np.asarray(adj[new_u].sum(axis=0)).ravel()
        if len(new_i):
            weights.user += np.asarray(adj_t[new_i].sum(axis=0)).ravel()

    return restrict(t, np.flatnonzero(su), np.flatnonzero(si))


def select_seeds(t: InteractionTensor, count: int, rng=None) -> tuple[np.ndarray, np.ndarray]:
    """Uniform seed users and items without replacement (clamped to population)."""
    if count < 1:
        raise ContractError(f"seed count must be >= 1, got {count}")
    rng = np.random.default_rng(rng)
    users = rng.choice(t.num_users, size=min(count, t.num_users), replace=False)
    items = rng.choice(t.num_items, size=min(count, t.num_items), replace=False)
    return np.sort(users), np.sort(items)
