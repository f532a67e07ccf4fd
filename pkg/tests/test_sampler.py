import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from mbrec.graph import InteractionTensor, build_normalized_adjacency
from mbrec.ndcore import ContractError
from mbrec.sampler import SamplingWeights, _draw, restrict, sample_subgraph, select_seeds
from mbrec.synthetic import random_tensor


def tv(p, q):
    return 0.5 * np.abs(np.asarray(p) - np.asarray(q)).sum()


def brute_restriction(t, users, items):
    d = t.dense()
    return d[np.ix_(users, items)]


def tiny():
    # 3 users x 3 items with unequal degrees so the weights differ
    e = [(0, 0, 0), (0, 1, 0), (0, 1, 1), (1, 1, 0), (1, 2, 1), (2, 2, 0), (2, 0, 1)]
    e = np.array(e)
    return InteractionTensor.from_edges(3, 3, 2, e[:, 0], e[:, 1], e[:, 2])


def test_depth_zero_is_seed_induced():
    t = random_tensor(10, 12, 3, 50, seed=1)
    adj = build_normalized_adjacency(t)
    sub = sample_subgraph(t, adj, [1, 4], [0, 3, 7], depth=0, rng=0)
    assert sub.users.tolist() == [1, 4] and sub.items.tolist() == [0, 3, 7]
    np.testing.assert_array_equal(sub.tensor.dense(), brute_restriction(t, [1, 4], [0, 3, 7]))


def test_star_graph_only_draws_neighbors():
    # seed user 0 is linked to items 0 and 1; item 2 belongs to user 1 only
    e = np.array([(0, 0, 0), (0, 1, 0), (1, 2, 0)])
    t = InteractionTensor.from_edges(2, 3, 1, e[:, 0], e[:, 1], e[:, 2])
    adj = build_normalized_adjacency(t)
    for s in range(300):
        sub = sample_subgraph(t, adj, [0], [], depth=1, per_step=1, rng=s)
        assert len(sub.items) == 1 and sub.items[0] in (0, 1)


def test_draw_frequencies_match_squared_weights():
    t = tiny()
    adj = build_normalized_adjacency(t)
    # one seed user: item weights are that user's normalized row
    p = np.asarray(adj[[0]].sum(axis=0)).ravel()
    expected = SamplingWeights.distribution(p, np.arange(3))
    counts = np.zeros(3)
    for s in range(10_000):
        sub = sample_subgraph(t, adj, [0], [], depth=1, per_step=1, rng=s)
        counts[sub.items] += 1
    assert tv(counts / counts.sum(), expected) < 0.05


def test_draw_without_replacement_follows_sequential_law():
    # ordered pairs drawn by _draw vs explicit sequential draws with renormalization
    p = np.array([0.5, 1.0, 0.0, 2.0, 0.3])
    w = p ** 2
    expected = {}
    for a in range(5):
        for b in range(5):
            if a != b and w[a] > 0 and w[b] > 0:
                expected[(a, b)] = w[a] / w.sum() * w[b] / (w.sum() - w[a])
    rng = np.random.default_rng(0)
    seen = np.zeros(5, bool)
    counts = {}
    n = 20_000
    for _ in range(n):
        a, b = _draw(rng, p, seen, 2)
        counts[(a, b)] = counts.get((a, b), 0) + 1
    keys = set(expected) | set(counts)
    assert tv([counts.get(k, 0) / n for k in keys], [expected.get(k, 0) for k in keys]) < 0.05


def test_zero_weight_fallback_fills_request():
    p = np.array([0.0, 2.0, 0.0, 0.0])
    got = _draw(np.random.default_rng(3), p, np.zeros(4, bool), 3)
    assert got[0] == 1 and len(set(got.tolist())) == 3


def test_exhausted_pool_short_circuits():
    got = _draw(np.random.default_rng(0), np.ones(3), np.ones(3, bool), 5)
    assert len(got) == 0


def test_distribution_sums_to_one():
    d = SamplingWeights.distribution(np.array([0.0, 1.0, 3.0, 2.0]), np.array([0, 2, 3]))
    assert np.all(d >= 0) and d.sum() == pytest.approx(1.0)
    np.testing.assert_allclose(d, [0, 9 / 13, 4 / 13])


def test_precondition_errors():
    t = tiny()
    adj = build_normalized_adjacency(t)
    with pytest.raises(ContractError):
        sample_subgraph(t, adj, [], [], depth=1)
    with pytest.raises(ContractError):
        sample_subgraph(t, adj, [0], [], depth=-1)
    with pytest.raises(ContractError):
        select_seeds(t, 0)


@given(st.integers(0, 10_000), st.integers(0, 3), st.integers(1, 4))
def test_sampler_invariants(seed, depth, per_step):
    t = random_tensor(20, 25, 3, 80, seed=seed % 7)
    adj = build_normalized_adjacency(t)
    rng = np.random.default_rng(seed)
    su, si = select_seeds(t, 2, rng)
    sub = sample_subgraph(t, adj, su, si, depth, per_step, rng)
    assert set(su) <= set(sub.users) and set(si) <= set(sub.items)
    assert len(set(sub.users.tolist())) == len(sub.users)  # no node twice
    assert len(sub.users) <= len(su) + depth * per_step
    assert len(sub.items) <= len(si) + depth * per_step
    np.testing.assert_array_equal(sub.tensor.dense(), brute_restriction(t, sub.users, sub.items))
    rng2 = np.random.default_rng(seed)
    su2, si2 = select_seeds(t, 2, rng2)
    again = sample_subgraph(t, adj, su2, si2, depth, per_step, rng2)
    assert again.users.tolist() == sub.users.tolist() and again.items.tolist() == sub.items.tolist()


def test_size_equality_when_enough_candidates():
    t = random_tensor(40, 40, 2, 400, seed=0)
    adj = build_normalized_adjacency(t)
    sub = sample_subgraph(t, adj, [0], [0], depth=2, per_step=3, rng=1)
    assert len(sub.users) == 7 and len(sub.items) == 7


def test_weight_accumulation_raises_neighbors():
    t = random_tensor(15, 15, 2, 60, seed=4)
    adj = build_normalized_adjacency(t)
    before = np.zeros(15)
    user = 3
    after = before + np.asarray(adj[[user]].sum(axis=0)).ravel()
    row = adj[user].toarray().ravel()
    assert np.all(after[row > 0] > before[row > 0])
    # the sampler applies the same rule: once user 3 is a seed, only its items can be drawn
    for s in range(50):
        sub = sample_subgraph(t, adj, [user], [], depth=1, per_step=1, rng=s)
        assert row[sub.items[0]] > 0


def test_restrict_brute_force_small_graphs(rng):
    for trial in range(30):
        t = random_tensor(int(rng.integers(1, 25)), int(rng.integers(1, 25)), 3, 60, seed=trial)
        u = rng.choice(t.num_users, int(rng.integers(1, t.num_users + 1)), replace=False)
        i = rng.choice(t.num_items, int(rng.integers(1, t.num_items + 1)), replace=False)
        sub = restrict(t, u, i)
        np.testing.assert_array_equal(sub.tensor.dense(), brute_restriction(t, np.sort(u), np.sort(i)))


def test_local_index_maps():
    t = random_tensor(10, 10, 2, 40, seed=0)
    sub = restrict(t, [7, 2, 5], [1, 9])
    assert sub.local_users([2, 7]).tolist() == [0, 2]
    with pytest.raises(ContractError):
        sub.local_items([3])


def test_select_seeds():
    t = random_tensor(30, 20, 2, 50, seed=0)
    u, i = select_seeds(t, 30, rng=0)
    assert u.tolist() == list(range(30)) and i.tolist() == list(range(20))  # clamped
    a = select_seeds(t, 5, rng=11)
    b = select_seeds(t, 5, rng=11)
    assert a[0].tolist() == b[0].tolist() and a[1].tolist() == b[1].tolist()


def test_seed_selection_is_uniform():
    t = random_tensor(10, 8, 2, 30, seed=0)
    counts = np.zeros(10)
    rng = np.random.default_rng(5)
    for _ in range(5000):
        u, _ = select_seeds(t, 3, rng)
        counts[u] += 1
    assert tv(counts / counts.sum(), np.full(10, 0.1)) < 0.05
