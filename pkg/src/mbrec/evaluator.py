"""Leave-one-out top-N evaluation, sparsity buckets and attention export."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import ndcore as nd
from .config import Config
from .graph import InteractionTensor, build_normalized_adjacency
from .model import as_tensors, forward_states, score
from .sampler import SubGraph, full_graph, sample_subgraph


def rank_of(scores: np.ndarray, items: np.ndarray, pos: int = 0) -> int:
    """1-based rank of candidate ``pos``; ties go to the smaller item index."""
    s, it = scores[pos], items[pos]
    return 1 + int(np.sum(scores > s) + np.sum((scores == s) & (items < it)))


def hit(rank: int, n: int) -> float:
    return 1.0 if rank <= n else 0.0


def ndcg(rank: int, n: int) -> float:
    return 1.0 / math.log2(rank + 1) if rank <= n else 0.0


@dataclass
class RankingResult:
    user: int
    items: np.ndarray  # candidates, positive first
    scores: np.ndarray
    rank: int
    hr: dict[int, float]
    ndcg: dict[int, float]

    @property
    def num_negatives(self) -> int:
        return len(self.items) - 1


@dataclass
class EvalReport:
    metrics: dict[tuple[str, int], float]
    results: list[RankingResult]
    skipped_users: int = 0  # users without a test pair
    short_users: list[tuple[int, int]] = field(default_factory=list)  # (user, negatives used)

    def value(self, name: str, n: int) -> float:
        return self.metrics[(name, n)]


def sample_negatives(rng: np.random.Generator, excluded: np.ndarray, num_items: int, count: int) -> np.ndarray:
    mask = np.ones(num_items, dtype=bool)
    mask[excluded] = False
    pool = np.flatnonzero(mask)
    if len(pool) <= count:
        return pool
    return np.sort(rng.choice(pool, size=count, replace=False))


def evaluation_subgraph(t: InteractionTensor, users: np.ndarray, items: np.ndarray, cfg: Config,
                        rng) -> SubGraph:
    """The whole graph when it fits under ``eval_node_cap``; otherwise a sampled one."""
    if t.num_users + t.num_items <= cfg.eval_node_cap:
        return full_graph(t)
    room = max(cfg.eval_node_cap - len(np.unique(users)) - len(np.unique(items)), 0)
    depth = max(cfg.sample_depth, 1)
    per_step = max(room // (2 * depth), 1)
    return sample_subgraph(t, build_normalized_adjacency(t), users, items, depth, per_step, rng)


def evaluate(params: dict[str, np.ndarray], t: InteractionTensor, test_pairs: np.ndarray,
             cfg: Config, target: int, seed: int | None = None,
             full: InteractionTensor | None = None) -> EvalReport:
    """HR@N / NDCG@N with sampled negatives for every test (user, item) pair.

    ``t`` is the graph used for message passing (the training tensor);
    negatives exclude every item the user adopted under the target behavior in
    ``full`` (defaults to ``t``) plus the held-out item itself.
    """
    rng = np.random.default_rng(cfg.seed if seed is None else seed)
    full = t if full is None else full
    adopted = full.adjacency(target)
    cands, short = [], []
    for u, pos in test_pairs:
        excl = np.append(adopted.indices[adopted.indptr[u]:adopted.indptr[u + 1]], pos)
        neg = sample_negatives(rng, excl, t.num_items, cfg.negatives)
        if len(neg) < cfg.negatives:
            short.append((int(u), len(neg)))
        cands.append(np.concatenate([[pos], neg]).astype(np.int64))
    all_items = np.unique(np.concatenate(cands)) if cands else np.zeros(0, np.int64)
    sub = evaluation_subgraph(t, test_pairs[:, 0], all_items, cfg, rng)

    tensors = as_tensors(params)
    states = forward_states(tensors, sub, cfg)
    lu = np.concatenate([np.full(len(c), u) for (u, _), c in zip(test_pairs, cands)]) if cands else np.zeros(0, np.int64)
    li = np.concatenate(cands) if cands else np.zeros(0, np.int64)
    scores, _ = score(tensors, states, sub.local_users(lu), sub.local_items(li), cfg) if len(lu) else (nd.Tensor(np.zeros(0)), None)
    scores = scores.data

    results, off = [], 0
    for (u, _), c in zip(test_pairs, cands):
        sc = scores[off:off + len(c)]
        off += len(c)
        r = rank_of(sc, c)
        results.append(RankingResult(int(u), c, sc, r,
                                     {n: hit(r, n) for n in cfg.topn},
                                     {n: ndcg(r, n) for n in cfg.topn}))
    metrics = {}
    for n in cfg.topn:
        metrics[("HR", n)] = float(np.mean([r.hr[n] for r in results])) if results else 0.0
        metrics[("NDCG", n)] = float(np.mean([r.ndcg[n] for r in results])) if results else 0.0
    skipped = int(np.sum(np.diff(adopted.indptr) == 0))
    return EvalReport(metrics, results, skipped, short)


@dataclass
class Bucket:
    low: int  # smallest interaction count in the bucket
    high: int
    population: int
    hr: dict[int, float]
    ndcg: dict[int, float]


def sparsity_buckets(t: InteractionTensor, results: list[RankingResult], buckets: int = 5) -> list[Bucket]:
    """Equal-population user groups ordered by total interaction count."""
    if not results:
        return []
    deg = t.user_degree()
    users = np.array([r.user for r in results])
    order = np.lexsort((users, deg[users]))
    out = []
    for part in np.array_split(order, min(buckets, len(results))):
        rs = [results[i] for i in part]
        ns = sorted(rs[0].hr)
        out.append(Bucket(int(deg[users[part]].min()), int(deg[users[part]].max()), len(rs),
                          {n: float(np.mean([r.hr[n] for r in rs])) for n in ns},
                          {n: float(np.mean([r.ndcg[n] for r in rs])) for n in ns}))
    return out


@dataclass
class AttentionRecord:
    behaviors: list[str]
    behavior_correlation: np.ndarray  # K x K, mean over heads, first layer
    behavior_importance: np.ndarray  # K
    layer_importance: np.ndarray  # (L+1) x (L+1), mean over heads


def export_attention(params: dict[str, np.ndarray], t: InteractionTensor, user: int, item: int,
                     cfg: Config, behaviors: list[str] | None = None) -> AttentionRecord:
    """Learned weights for one user (first-layer attention) and one (user, item) pair."""
    if not 0 <= user < t.num_users:
        raise nd.ContractError(f"user index {user} out of range [0, {t.num_users})")
    if not 0 <= item < t.num_items:
        raise nd.ContractError(f"item index {item} out of range [0, {t.num_items})")
    sub = full_graph(t)
    tensors = as_tensors(params)
    states = forward_states(tensors, sub, cfg)
    tr = states.traces[0]["user"]
    alpha = tr.attention.data[user].mean(axis=0)
    beta = tr.behavior_weights.data[user]
    _, phi = score(tensors, states, [user], [item], cfg)
    names = list(behaviors) if behaviors is not None else [f"b{k}" for k in range(t.num_behaviors)]
    return AttentionRecord(names, alpha, beta, phi.data[0].mean(axis=0))
