"""Multi-behavior graph encoder layer and its stacking.

Every function here works on whole blocks of nodes at once: messages are
``(n, K, d)`` arrays and per-node attention weights carry leading node axes.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from . import ndcore as nd
from .ndcore import Tensor
from .sampler import SubGraph

SIDES = ("user", "item")


def side_prefix(layer: int, side: str, share_sides: bool) -> str:
    return f"layer{layer}.{'shared' if share_sides else side}"


def _mean_rows(adj: sp.csr_matrix) -> sp.csr_matrix:
    deg = np.asarray(adj.sum(axis=1)).ravel()
    scale = np.divide(1.0, deg, out=np.zeros_like(deg, dtype=float), where=deg > 0)
    return sp.diags(scale) @ adj


def behavior_message(src: Tensor, adj: sp.csr_matrix, channels: Tensor, gate_w: Tensor,
                     gate_b: Tensor, mean_pool: bool = False) -> tuple[Tensor, Tensor]:
    """Gated multi-channel transform of each node's summed behavior-k neighbors.

    ``adj`` is (n_dst, n_src) for one behavior; ``channels`` is (M, d, d),
    ``gate_w`` (M, d), ``gate_b`` (M,). Returns the (n_dst, d) messages and
    the (n_dst, M) channel gates.
    """
    if mean_pool:
        adj = _mean_rows(adj)
    s = nd.spmm(adj, src)
    gates = nd.relu(nd.einsum("nd,md->nm", s, gate_w) + gate_b)
    per_channel = nd.einsum("nd,med->nme", s, channels)
    return nd.einsum("nm,nme->ne", gates, per_channel), gates


def behavior_interdependency(messages: Tensor, w_query: Tensor, w_key: Tensor,
                             w_value: Tensor, heads: int):
    """Multi-head attention across the K behavior messages of each node.

    Returns ``(refined, recalibrated, weights)`` where ``refined`` includes the
    residual, ``recalibrated`` does not, and ``weights`` is (n, C, K, K).
    """
    n, k, d = messages.shape
    if d % heads:
        raise nd.ContractError(f"dim {d} is not divisible by heads {heads}")
    dh = d // heads

    def project(w):
        return nd.reshape(nd.einsum("nkd,ed->nke", messages, w), (n, k, heads, dh))

    q, kk, v = project(w_query), project(w_key), project(w_value)
    logits = nd.einsum("nkch,nqch->nckq", q, kk) * (1.0 / math.sqrt(dh))
    weights = nd.softmax(logits, axis=-1)
    mixed = nd.reshape(nd.einsum("nckq,nqch->nkch", weights, v), (n, k, d))
    return mixed + messages, mixed, weights


def aggregate_behaviors(refined: Tensor, w1: Tensor, b1: Tensor, w2: Tensor, b2: Tensor):
    """Softmax-weighted sum over behaviors; returns ``(embedding, weights)``."""
    hidden = nd.relu(nd.einsum("nkd,ed->nke", refined, w1) + b1)
    logits = nd.einsum("nke,e->nk", hidden, w2) + b2
    weights = nd.softmax(logits, axis=-1)
    return nd.einsum("nk,nkd->nd", weights, refined), weights


@dataclass
class LayerTrace:
    """Intermediate values of one propagation step for one side."""

    messages: Tensor
    gates: list[Tensor]
    recalibrated: Tensor
    refined: Tensor
    attention: Tensor
    behavior_weights: Tensor


def _side_update(src: Tensor, adjs: list[sp.csr_matrix], params: dict, prefix: str,
                 heads: int, mean_pool: bool):
    msgs, gates = [], []
    channels = params[f"{prefix}.channels"]
    gate_w = params[f"{prefix}.gate_w"]
    gate_b = params[f"{prefix}.gate_b"]
    for k, adj in enumerate(adjs):
        h, g = behavior_message(src, adj, channels[k], gate_w[k], gate_b[k], mean_pool)
        msgs.append(h)
        gates.append(g)
    messages = nd.stack(msgs, axis=1)
    refined, recal, att = behavior_interdependency(
        messages, params[f"{prefix}.query"], params[f"{prefix}.key"], params[f"{prefix}.value"], heads)
    out, beta = aggregate_behaviors(
        refined, params[f"{prefix}.agg_w1"], params[f"{prefix}.agg_b1"],
        params[f"{prefix}.agg_w2"], params[f"{prefix}.agg_b2"])
    return out, LayerTrace(messages, gates, recal, refined, att, beta)


def propagate_layer(user_states: Tensor, item_states: Tensor, sub: SubGraph, params: dict,
                    layer: int, heads: int, share_sides: bool = False, mean_pool: bool = False):
    """One propagation step on both sides; returns ``(users, items, traces)``."""
    t = sub.tensor
    k = t.num_behaviors
    new_u, tr_u = _side_update(item_states, [t.adjacency(b) for b in range(k)], params,
                               side_prefix(layer, "user", share_sides), heads, mean_pool)
    new_i, tr_i = _side_update(user_states, [t.adjacency_t(b) for b in range(k)], params,
                               side_prefix(layer, "item", share_sides), heads, mean_pool)
    return new_u, new_i, {"user": tr_u, "item": tr_i}


@dataclass
class NodeStates:
    users: list[Tensor] = field(default_factory=list)  # one (|U|, d) block per layer 0..L
    items: list[Tensor] = field(default_factory=list)
    traces: list[dict] = field(default_factory=list)  # one per propagation step

    @property
    def num_layers(self) -> int:
        return len(self.users) - 1


def encode(base_users: Tensor, base_items: Tensor, sub: SubGraph, params: dict, layers: int,
           heads: int, share_sides: bool = False, mean_pool: bool = False) -> NodeStates:
    """Stack ``layers`` propagation steps, keeping every intermediate layer."""
    if layers < 1:
        raise nd.ContractError(f"need at least one layer, got {layers}")
    states = NodeStates([base_users], [base_items])
    for layer in range(layers):
        u, i, tr = propagate_layer(states.users[-1], states.items[-1], sub, params, layer,
                                   heads, share_sides, mean_pool)
        states.users.append(u)
        states.items.append(i)
        states.traces.append(tr)
    return states
