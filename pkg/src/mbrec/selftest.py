"""Quick in-process oracle checks behind ``mbrec selftest``."""
from __future__ import annotations

import math
import time

import numpy as np

from . import ndcore as nd
from . import reference
from .config import Config
from .evaluator import hit, ndcg, rank_of
from .gradcheck import check_model, randomized_params
from .model import score_matrix
from .sampler import full_graph
from .synthetic import random_tensor


def _ops_gradients() -> float:
    rng = np.random.default_rng(0)
    a, b = rng.normal(size=(3, 4)), rng.normal(size=(4, 2))
    with nd.Tape() as tape:
        ta, tb = tape.watch(a, "a"), tape.watch(b, "b")
        y = nd.sum(nd.softmax(nd.relu(ta @ tb)) * nd.l2_normalize(ta @ tb))
        g = tape.backward(y)

    def f():
        z = np.maximum(a @ b, 0)
        s = np.exp(z - z.max(-1, keepdims=True))
        s /= s.sum(-1, keepdims=True)
        m = a @ b
        return float(np.sum(s * m / np.sqrt((m * m).sum(-1, keepdims=True) + 1e-12)))

    from .gradcheck import central_difference, relative_error
    return max(relative_error(g["a"], central_difference(f, a)),
               relative_error(g["b"], central_difference(f, b)))


def _forward_oracle() -> float:
    t = random_tensor(6, 8, 3, 30, seed=1)
    cfg = Config(dim=4, channels=2, heads=2, layers=2)
    params = randomized_params(cfg, t, 3)
    u = np.repeat(np.arange(6), 8)
    i = np.tile(np.arange(8), 6)
    fast = score_matrix(params, full_graph(t), u, i, cfg)
    eu, ev = reference.states(params, t.dense(), 2, 2)
    slow = [reference.pair_score(params, [e[a] for e in eu], [e[b] for e in ev], 2)[0] for a, b in zip(u, i)]
    return float(np.abs(fast - np.array(slow)).max())


def _metrics() -> bool:
    rng = np.random.default_rng(0)
    for _ in range(200):
        s = rng.integers(0, 20, 100).astype(float)
        items = rng.permutation(100)
        order = sorted(range(100), key=lambda c: (-s[c], items[c]))
        r = order.index(0) + 1
        if rank_of(s, items) != r or ndcg(r, 10) != (1 / math.log2(r + 1) if r <= 10 else 0.0) or hit(r, 10) != float(r <= 10):
            return False
    return ndcg(3, 10) == 0.5 and ndcg(1, 10) == 1.0


def _adam() -> float:
    x = np.array([1.0, -2.0, 0.5])
    st = nd.AdamState(learning_rate=1e-2)
    for _ in range(2000):
        x = nd.adam_step(st, x, 2 * x)
    return float(np.sum(x * x))


def run(full: bool = False, echo=print) -> bool:
    checks = [
        ("core op gradients vs central differences", lambda: _ops_gradients(), lambda v: v <= 1e-6),
        ("vectorized score vs scalar reference", _forward_oracle, lambda v: v <= 1e-9),
        ("HR/NDCG vs brute-force sort", _metrics, bool),
        ("Adam on a quadratic bowl", _adam, lambda v: v < 1e-4),
    ]
    if full:
        t = random_tensor(8, 12, 3, 60, seed=2)
        cfg = Config(dim=8, channels=2, heads=2, layers=2, agg_hidden=8)
        checks.append(("full-model gradients vs central differences",
                       lambda: max(check_model(t, cfg, h=1e-5).values()), lambda v: v <= 1e-6))
    ok = True
    for name, fn, accept in checks:
        t0 = time.perf_counter()
        value = fn()
        passed = accept(value)
        ok &= passed
        echo(f"{'PASS' if passed else 'FAIL'}\t{name}\t{value}\t{time.perf_counter() - t0:.2f}s")
    return ok
