"""Planted multi-behavior datasets for checks and demos."""
from __future__ import annotations

import numpy as np

from .graph import BehaviorVocab, Dataset, InteractionTensor


def planted(num_users: int = 100, num_items: int = 50, clusters: int = 5, views: int = 10,
            carts: int = 5, buys: int = 3, affinity: float = 0.8, seed: int = 0,
            behaviors=("view", "cart", "buy")) -> Dataset:
    """Clustered users/items with nested behaviors: buys within carts within views.

    Each user views ``views`` items, drawn from its own cluster with probability
    ``affinity`` and uniformly otherwise; carts are a subset of views biased to
    the own cluster, and buys a subset of carts. Edges are emitted in a random
    time order so the held-out purchase is not systematically special.
    """
    rng = np.random.default_rng(seed)
    ucl = np.arange(num_users) % clusters
    icl = np.arange(num_items) % clusters
    edges = []
    for u in range(num_users):
        own = np.flatnonzero(icl == ucl[u])
        other = np.flatnonzero(icl != ucl[u])
        n_own = min(len(own), rng.binomial(views, affinity))
        seen = list(rng.choice(own, n_own, replace=False))
        seen += list(rng.choice(other, min(len(other), views - n_own), replace=False))
        seen = np.array(seen)
        w = np.where(icl[seen] == ucl[u], 4.0, 1.0)
        cart = rng.choice(seen, min(carts, len(seen)), replace=False, p=w / w.sum())
        w = np.where(icl[cart] == ucl[u], 4.0, 1.0)
        buy = rng.choice(cart, min(buys, len(cart)), replace=False, p=w / w.sum())
        edges += [(u, j, 0) for j in seen] + [(u, j, 1) for j in cart] + [(u, j, 2) for j in buy]
    edges = np.array(edges)
    edges = edges[rng.permutation(len(edges))]
    t = InteractionTensor.from_edges(num_users, num_items, 3, edges[:, 0], edges[:, 1], edges[:, 2])
    vocab = BehaviorVocab.from_names(behaviors, behaviors[-1])
    return Dataset(t, vocab, [f"u{i}" for i in range(num_users)], [f"i{j}" for j in range(num_items)])


def random_tensor(num_users: int, num_items: int, num_behaviors: int, num_edges: int,
                  seed: int = 0) -> InteractionTensor:
    rng = np.random.default_rng(seed)
    return InteractionTensor.from_edges(
        num_users, num_items, num_behaviors,
        rng.integers(0, num_users, num_edges), rng.integers(0, num_items, num_edges),
        rng.integers(0, num_behaviors, num_edges))
