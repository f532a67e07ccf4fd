"""Unvectorized scalar re-implementation of the model, used as a test oracle.

Everything is plain Python loops over floats; nothing here shares code with
the vectorized path in :mod:`mbrec.encoder` / :mod:`mbrec.fusion`.
"""
from __future__ import annotations

import math


def _mv(mat, vec, rows=None):
    rows = range(len(mat)) if rows is None else rows
    return [sum(mat[r][c] * vec[c] for c in range(len(vec))) for r in rows]


def _softmax(xs):
    m = max(xs)
    es = [math.exp(x - m) for x in xs]
    z = sum(es)
    return [e / z for e in es]


def _relu(x):
    return x if x > 0 else 0.0


def _tolist(a):
    return a.tolist() if hasattr(a, "tolist") else a


def node_update(neigh_sums, p, heads):
    """Next-layer embedding of one node from its K neighbor sums.

    Returns ``(embedding, messages, attention[c][k][k'], behavior_weights)``.
    """
    K = len(neigh_sums)
    d = len(neigh_sums[0])
    M = len(p["channels"][0])
    dh = d // heads
    msgs = []
    for k in range(K):
        s = neigh_sums[k]
        gate = [_relu(sum(p["gate_w"][k][m][c] * s[c] for c in range(d)) + p["gate_b"][k][m]) for m in range(M)]
        h = [0.0] * d
        for m in range(M):
            us = _mv(p["channels"][k][m], s)
            for e in range(d):
                h[e] += gate[m] * us[e]
        msgs.append(h)
    att = []
    refined = [[0.0] * d for _ in range(K)]
    for c in range(heads):
        rows = range(c * dh, (c + 1) * dh)
        q = [_mv(p["query"], msgs[k], rows) for k in range(K)]
        kk = [_mv(p["key"], msgs[k], rows) for k in range(K)]
        v = [_mv(p["value"], msgs[k], rows) for k in range(K)]
        att_c = []
        for k in range(K):
            logits = [sum(q[k][x] * kk[k2][x] for x in range(dh)) / math.sqrt(dh) for k2 in range(K)]
            w = _softmax(logits)
            att_c.append(w)
            for x in range(dh):
                refined[k][c * dh + x] = sum(w[k2] * v[k2][x] for k2 in range(K))
        att.append(att_c)
    for k in range(K):
        for e in range(d):
            refined[k][e] += msgs[k][e]
    logits = []
    for k in range(K):
        hid = [_relu(sum(p["agg_w1"][e][c] * refined[k][c] for c in range(d)) + p["agg_b1"][e])
               for e in range(len(p["agg_w1"]))]
        logits.append(sum(p["agg_w2"][e] * hid[e] for e in range(len(hid))) + p["agg_b2"][0])
    beta = _softmax(logits)
    out = [sum(beta[k] * refined[k][e] for k in range(K)) for e in range(d)]
    return out, msgs, att, beta


def states(params, dense, layers, heads, share_sides=False):
    """All layer embeddings for every user and item of a dense I x J x K tensor."""
    P = {k: _tolist(v) for k, v in params.items()}
    X = _tolist(dense)
    I, J, K = len(X), len(X[0]), len(X[0][0])
    eu = [P["embed.user"]]
    ev = [P["embed.item"]]
    for layer in range(layers):
        def side(name):
            pre = f"layer{layer}.{'shared' if share_sides else name}."
            return {k[len(pre):]: v for k, v in P.items() if k.startswith(pre)}
        pu, pv = side("user"), side("item")
        d = len(eu[-1][0])
        nu = []
        for i in range(I):
            sums = [[sum(ev[-1][j][c] for j in range(J) if X[i][j][k]) for c in range(d)] for k in range(K)]
            nu.append(node_update(sums, pu, heads)[0])
        nv = []
        for j in range(J):
            sums = [[sum(eu[-1][i][c] for i in range(I) if X[i][j][k]) for c in range(d)] for k in range(K)]
            nv.append(node_update(sums, pv, heads)[0])
        eu.append(nu)
        ev.append(nv)
    return eu, ev


def pair_score(params, user_layers, item_layers, heads, epsilon=1e-12):
    """Score of one pair from its per-layer embeddings; returns ``(score, phi[c][l][l'])``."""
    P = {k: _tolist(v) for k, v in params.items() if k.startswith("fusion.")}
    d = len(user_layers[0])
    dh = d // heads

    def norm(v):
        r = math.sqrt(sum(x * x for x in v) + epsilon)
        return [x / r for x in v]

    eu = [norm(v) for v in user_layers]
    ev = [norm(v) for v in item_layers]
    L1 = len(eu)
    phi = []
    gamma = [0.0] * d
    for c in range(heads):
        rows = range(c * dh, (c + 1) * dh)
        pu = [_mv(P["fusion.key"], e, rows) for e in eu]
        pv = [_mv(P["fusion.key"], e, rows) for e in ev]
        tu = [_mv(P["fusion.value"], e, rows) for e in eu]
        tv = [_mv(P["fusion.value"], e, rows) for e in ev]
        ph = [[_relu(sum(pu[a][x] * pv[b][x] for x in range(dh))) for b in range(L1)] for a in range(L1)]
        phi.append(ph)
        for x in range(dh):
            gamma[c * dh + x] = sum(ph[a][b] * tu[a][x] * tv[b][x] for a in range(L1) for b in range(L1))
    hidden = [_relu(sum(P["fusion.w3"][e][c] * gamma[c] for c in range(d)) + P["fusion.b3"][e]) + gamma[e]
              for e in range(d)]
    return sum(P["fusion.w4"][e] * hidden[e] for e in range(d)), phi


def score(params, dense, user, item, layers, heads, share_sides=False, epsilon=1e-12):
    eu, ev = states(params, dense, layers, heads, share_sides)
    return pair_score(params, [e[user] for e in eu], [e[item] for e in ev], heads, epsilon)[0]
