from collections import deque

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from autodiff_core import ParamStore, Tape, Var, grad_check
from tree_encoder import gcn_encode, prune_keep_matrix, prune_mask, register_tree_encoder_params, structured_attention
from tree_inducer import ScoreSet, TreeMarginals, mtt_marginals
from tree_tools import ROOT, Arborescence


def _attention_store(d, seed=0):
    store = ParamStore(seed)
    register_tree_encoder_params(store, "structured_attention", d)
    return store


def _gcn_store(d, layers, seed=0):
    store = ParamStore(seed)
    register_tree_encoder_params(store, "gcn", d, layers)
    for layer in range(layers):
        store.set_value(f"gcn.b_{layer}", np.random.default_rng(layer).normal(size=d))
    return store


def _random_marginals(m, seed):
    rng = np.random.default_rng(seed)
    return mtt_marginals(ScoreSet(rng.normal(size=(m, m)), rng.normal(size=m)))


def test_zero_structure(rng):
    d, m = 3, 4
    store = _attention_store(d)
    H, h_a = rng.normal(size=(m, d)), rng.normal(size=d)
    out = structured_attention(H, TreeMarginals(np.zeros((m, m)), np.zeros(m)), h_a, store)
    W = store.value("tree_encoder.W_s")
    for i in range(m):
        np.testing.assert_allclose(out.S.value[i], np.tanh(W @ np.concatenate([np.zeros(2 * d), H[i]])), atol=1e-12)


def test_chain_parent_context(rng):
    d = 2
    store = _attention_store(d)
    store.set_value("tree_encoder.W_s", np.hstack([np.eye(d), np.zeros((d, 2 * d))]))
    H = rng.uniform(-0.5, 0.5, size=(2, d))
    h_a = rng.uniform(-0.5, 0.5, size=d)
    P = np.array([[0.0, 1.0], [0.0, 0.0]])
    out = structured_attention(H, TreeMarginals(P, np.array([1.0, 0.0])), h_a, store).S.value
    np.testing.assert_allclose(out[1], np.tanh(H[0]), atol=1e-15)
    np.testing.assert_allclose(out[0], np.tanh(h_a), atol=1e-15)


@pytest.mark.parametrize("child_ctx", ["h_k", "h_i"])
def test_attention_matches_loops(rng, child_ctx):
    d, m = 3, 5
    store = _attention_store(d, seed=3)
    H, h_a = rng.normal(size=(m, d)), rng.normal(size=d)
    marg = _random_marginals(m, 8)
    P, Pr = marg.P, marg.Pr
    W = store.value("tree_encoder.W_s")
    out = structured_attention(H, marg, h_a, store, child_ctx=child_ctx).S.value
    for i in range(m):
        parent = sum(P[k, i] * H[k] for k in range(m)) + Pr[i] * h_a
        if child_ctx == "h_k":
            child = sum(P[i, k] * H[k] for k in range(m))
        else:
            child = sum(P[i, k] * H[i] for k in range(m))
        expected = np.tanh(W @ np.concatenate([parent, child, H[i]]))
        assert np.abs(out[i] - expected).max() <= 1e-12


def test_attention_is_permutation_equivariant(rng):
    d, m = 3, 5
    store = _attention_store(d, seed=1)
    H, h_a = rng.normal(size=(m, d)), rng.normal(size=d)
    marg = _random_marginals(m, 2)
    perm = np.array([0, 3, 1, 4, 2])
    base = structured_attention(H, marg, h_a, store).S.value
    moved = structured_attention(H[perm], TreeMarginals(marg.P[np.ix_(perm, perm)], marg.Pr[perm]), h_a, store)
    np.testing.assert_allclose(moved.S.value, base[perm], atol=1e-12)


def test_attention_bad_child_ctx(rng):
    with pytest.raises(ValueError, match="child_ctx"):
        structured_attention(np.ones((2, 2)), TreeMarginals(np.zeros((2, 2)), np.ones(2) / 2), np.ones(2),
                             _attention_store(2), child_ctx="both")


def test_gcn_zero_weights(rng):
    store = ParamStore()
    register_tree_encoder_params(store, "gcn", 3, 1)
    store.set_value("gcn.W_0", np.zeros((3, 3)))
    out = gcn_encode(rng.normal(size=(4, 3)), _random_marginals(4, 0), store, 1)
    np.testing.assert_array_equal(out.S.value, np.zeros((4, 3)))


def test_gcn_self_loop_only(rng):
    store = _gcn_store(3, 1)
    H = rng.normal(size=(4, 3))
    out = gcn_encode(H, TreeMarginals(np.zeros((4, 4)), np.full(4, 0.25)), store, 1).S.value
    expected = np.maximum(H @ store.value("gcn.W_0") + store.value("gcn.b_0"), 0.0)
    np.testing.assert_allclose(out, expected, atol=1e-12)


def test_gcn_two_layers_match_naive(rng):
    m, d = 5, 3
    store = _gcn_store(d, 2, seed=6)
    H = rng.normal(size=(m, d))
    marg = _random_marginals(m, 4)
    A = marg.P + marg.P.T + np.eye(m)
    A = A / A.sum(axis=1, keepdims=True)
    h = H
    for layer in range(2):
        h = np.maximum(A @ h @ store.value(f"gcn.W_{layer}") + store.value(f"gcn.b_{layer}"), 0.0)
    out = gcn_encode(H, marg, store, 2)
    np.testing.assert_allclose(out.S.value, h, atol=1e-12)
    np.testing.assert_array_equal(out.s0.value, out.S.value[0])


def test_structured_attention_gradients(rng):
    d, m = 3, 4
    store = _attention_store(d, seed=2)
    store.add("H", (m, d), init="uniform", scale=1.0)
    store.add("E", (m, m), init="uniform", scale=1.0)
    store.add("r", (m,), init="uniform", scale=1.0)
    h_a = rng.normal(size=d)

    def f(tape):
        H = Var(tape, tape.param("H"))
        marg = mtt_marginals(ScoreSet.from_vars(Var(tape, tape.param("E")), Var(tape, tape.param("r"))))
        out = structured_attention(H, marg, h_a, store, tape=tape)
        return tape.sum(out.S.node)

    assert grad_check(f, store) <= 1e-4


def _star(m, centre):
    heads = [centre] * m
    heads[centre] = ROOT
    return Arborescence(tuple(heads), centre, 0.0, token_offset=1)


def test_prune_none_is_identity():
    marg = _random_marginals(4, 0)
    assert prune_mask(marg, range(1, 2), None, _star(4, 1)) is marg


def test_prune_star_k1():
    marg = TreeMarginals(np.ones((5, 5)) - np.eye(5), np.full(5, 0.2))
    out = prune_mask(marg, range(2, 3), 1, _star(5, 2))
    for i in range(5):
        for j in range(5):
            kept = out.P[i, j] != 0.0
            assert kept == (i != j and 2 in (i, j))
    np.testing.assert_array_equal(out.Pr, marg.Pr)


def test_prune_rejects_bad_order():
    with pytest.raises(ValueError):
        prune_mask(_random_marginals(3, 0), range(1, 2), 0, _star(3, 1))


def _bfs_reached_edges(heads, aspect, k):
    """从方面词出发逐层扩展 k 次，记录经过的无向边"""
    neighbours = {v: set() for v in range(len(heads))}
    for j, h in enumerate(heads):
        if h >= 0:
            neighbours[h].add(j)
            neighbours[j].add(h)
    seen = set(aspect)
    frontier = deque(aspect)
    reached = set()
    for _ in range(k):
        next_frontier = deque()
        while frontier:
            u = frontier.popleft()
            for v in neighbours[u]:
                reached.add(frozenset((u, v)))
                if v not in seen:
                    seen.add(v)
                    next_frontier.append(v)
        frontier = next_frontier
    return reached


@st.composite
def _trees_with_aspect(draw, max_nodes=8):
    m = draw(st.integers(2, max_nodes))
    heads = [ROOT] + [draw(st.integers(0, j - 1)) for j in range(1, m)]
    start = draw(st.integers(1, m - 1))
    stop = draw(st.integers(start + 1, min(m, start + 2)))
    return Arborescence(tuple(heads), 0, 0.0, token_offset=1), range(start, stop)


@settings(max_examples=80, deadline=None)
@given(_trees_with_aspect(), st.integers(1, 3))
def test_prune_matches_bfs_neighbourhood(tree_and_aspect, k):
    tree, aspect = tree_and_aspect
    reached = _bfs_reached_edges(list(tree.heads), list(aspect), k)
    keep = prune_keep_matrix(tree, aspect, k)
    for h, j in tree.edges():
        expected = frozenset((h, j)) in reached
        assert keep[h, j] == expected and keep[j, h] == expected


@settings(max_examples=50, deadline=None)
@given(_trees_with_aspect(), st.integers(1, 3), st.integers(0, 2 ** 16))
def test_prune_never_increases_marginals(tree_and_aspect, k, seed):
    tree, aspect = tree_and_aspect
    marg = _random_marginals(tree.m, seed)
    pruned = prune_mask(marg, aspect, k, tree)
    assert np.all((pruned.P == marg.P) | (pruned.P == 0.0))
    assert np.all(np.abs(pruned.P) <= np.abs(marg.P))
    np.testing.assert_array_equal(pruned.Pr, marg.Pr)


@settings(max_examples=50, deadline=None)
@given(_trees_with_aspect(), st.integers(1, 4))
def test_larger_order_keeps_more_edges(tree_and_aspect, k):
    tree, aspect = tree_and_aspect
    small = prune_keep_matrix(tree, aspect, k)
    large = prune_keep_matrix(tree, aspect, k + 1)
    assert np.all(large[small])


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 6), st.integers(1, 3), st.integers(0, 2 ** 16))
def test_gcn_output_is_finite_and_nonnegative(m, layers, seed):
    d = 3
    rng = np.random.default_rng(seed)
    out = gcn_encode(rng.normal(size=(m, d)) * 5.0, _random_marginals(m, seed), _gcn_store(d, layers, seed), layers)
    assert out.S.shape == (m, d)
    assert np.all(np.isfinite(out.S.value)) and np.all(out.S.value >= 0.0)


def test_prune_on_tape_keeps_gradient_path():
    tape = Tape()
    E = Var(tape, tape.const(np.zeros((3, 3))))
    r = Var(tape, tape.const(np.zeros(3)))
    marg = mtt_marginals(ScoreSet.from_vars(E, r))
    out = prune_mask(marg, range(1, 2), 1, _star(3, 1))
    assert out.P_var is not None and out.P_var.tape is tape
    np.testing.assert_array_equal(out.P, out.P_var.value)
