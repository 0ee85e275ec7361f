import io

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from data_io import Instance, Lexicon
from tree_inducer import ScoreSet, TreeMarginals
from tree_tools import (ROOT, Arborescence, cle_extract, distance_report, enumerate_arborescences,
                        exhaustive_max_arborescence, hop_distance, is_arborescence, max_spanning_arborescence,
                        oracle_marginals, read_tree_dump, root_consistency, root_consistency_frame,
                        trees_from_parse, write_tree_dump)

LOVING = ["Loving", "the", "harry", "potter", "movie", "marathon"]


def random_tree(rng, m):
    order = rng.permutation(m)
    heads = [ROOT] * m
    for pos in range(1, m):
        heads[order[pos]] = int(order[rng.integers(0, pos)])
    return Arborescence(tuple(heads), int(order[0]))


def test_single_node_extraction():
    tree = cle_extract(TreeMarginals(np.zeros((1, 1)), np.ones(1)))
    assert tree.root == 0 and tree.heads == (ROOT,)


def test_dominant_chain():
    P = np.full((3, 3), 0.05)
    np.fill_diagonal(P, 0.0)
    P[0, 1] = P[1, 2] = 0.9
    tree = cle_extract(TreeMarginals(P, np.array([0.8, 0.1, 0.1])))
    assert tree.heads == (ROOT, 0, 1)


@pytest.mark.parametrize("seed", range(20))
def test_cle_matches_exhaustive_six_nodes(seed):
    rng = np.random.default_rng(seed)
    weights = rng.normal(size=(6, 6))
    for root in range(6):
        fast = max_spanning_arborescence(weights, root)
        slow = exhaustive_max_arborescence(weights, root=root)
        assert fast.root == root
        assert abs(fast.score - slow.score) <= 1e-9


def test_ties_prefer_the_lowest_head_not_the_root():
    assert max_spanning_arborescence(np.zeros((3, 3)), 2).heads == (2, 0, ROOT)
    weights = np.zeros((4, 4))
    weights[:, 3] = 1.0
    tree = max_spanning_arborescence(weights, 1)
    assert tree.heads[3] == 0 and tree.score == 1.0


@settings(max_examples=60, deadline=None)
@given(seed=st.integers(0, 2**31 - 1), root=st.integers(0, 4))
def test_cle_with_integer_ties_still_optimal(seed, root):
    weights = np.random.default_rng(seed).integers(0, 3, size=(5, 5)).astype(float)
    fast = max_spanning_arborescence(weights, root)
    assert is_arborescence(fast.heads) and fast.root == root
    assert fast.score == exhaustive_max_arborescence(weights, root=root).score


def test_unconstrained_maximum_is_reached_by_some_root(rng):
    weights = rng.normal(size=(5, 5))
    best = max(max_spanning_arborescence(weights, r).score for r in range(5))
    assert abs(best - exhaustive_max_arborescence(weights).score) <= 1e-9


@settings(max_examples=80, deadline=None)
@given(m=st.integers(1, 10), seed=st.integers(0, 2**31 - 1))
def test_cle_output_is_always_an_arborescence(m, seed):
    rng = np.random.default_rng(seed)
    P = rng.uniform(0, 1, size=(m, m))
    tree = cle_extract(TreeMarginals(P, rng.dirichlet(np.ones(m))))
    assert is_arborescence(tree.heads) and tree.heads[tree.root] == ROOT
    assert tree.token_offset == 1


@pytest.mark.parametrize("m, count", [(1, 1), (2, 2), (3, 9), (4, 64), (5, 625)])
def test_enumeration_counts(m, count):
    trees = enumerate_arborescences(m)
    assert len(trees) == count == m ** (m - 1)
    assert len(set(trees)) == count


def test_enumeration_range():
    with pytest.raises(ValueError):
        enumerate_arborescences(7)
    with pytest.raises(ValueError):
        enumerate_arborescences(0)


def test_oracle_symmetric_and_shift():
    sym = oracle_marginals(ScoreSet(np.zeros((2, 2)), np.zeros(2)))
    np.testing.assert_allclose(sym.Pr, [0.5, 0.5])
    rng = np.random.default_rng(0)
    scores = ScoreSet(rng.normal(size=(4, 4)), rng.normal(size=4))
    a, b = oracle_marginals(scores), oracle_marginals(scores.shifted(7.0))
    np.testing.assert_allclose(a.P, b.P, atol=1e-12)
    np.testing.assert_allclose(a.P.sum(axis=0) + a.Pr, np.ones(4), atol=1e-12)


def test_invalid_arborescence():
    assert not is_arborescence([ROOT, ROOT])
    assert not is_arborescence([1, 0, ROOT])
    with pytest.raises(ValueError):
        Arborescence((ROOT, 0), 1)


def test_hop_distance_examples():
    parse = Arborescence.from_parse_heads([-1, 5, 3, 4, 5, 0])
    assert hop_distance(parse, 0, 2) == 4
    assert hop_distance(parse, 0, 3) == 3
    induced = Arborescence.from_parse_heads([2, 2, -1, 2, 3, 4])
    assert hop_distance(induced, 0, 2) == 1
    assert hop_distance(induced, 0, 3) == 2
    assert hop_distance(parse, 5, 0) == 1


def test_hop_distance_bad_index():
    with pytest.raises(IndexError):
        hop_distance(Arborescence.from_parse_heads([-1, 0]), 0, 2)


@settings(max_examples=40, deadline=None)
@given(m=st.integers(1, 12), seed=st.integers(0, 2**31 - 1))
def test_hop_distance_is_a_metric(m, seed):
    rng = np.random.default_rng(seed)
    tree = random_tree(rng, m)
    u, v, w = (int(x) for x in rng.integers(0, m, size=3))
    assert hop_distance(tree, u, u) == 0
    assert hop_distance(tree, u, v) == hop_distance(tree, v, u)
    assert hop_distance(tree, u, w) <= hop_distance(tree, u, v) + hop_distance(tree, v, w)
    if u != v:
        assert hop_distance(tree, u, v) >= 1


def _loving_instance():
    return Instance(LOVING, (2, 4), "positive", (-1, 5, 3, 4, 5, 0), id="loving")


def test_distance_report_adjacent_opinion():
    inst = Instance(["great", "food"], (1, 2), "positive", (1, -1), id="x")
    lexicon = Lexicon(frozenset({"great"}), frozenset({"bad"}))
    report = distance_report([inst], {"parser": trees_from_parse([inst])}, lexicon)
    assert report.rows[0].mean == 1.0
    assert report.overall["parser"] == (1.0, 1)


def test_distance_report_uses_nearest_aspect_token_and_shortening():
    inst = _loving_instance()
    lexicon = Lexicon(frozenset({"loving"}), frozenset())
    induced = Arborescence((ROOT, 3, 3, 0, 3, 3, 3), 0, 0.0, token_offset=1)
    report = distance_report([inst], {"parser": trees_from_parse([inst]), "aclt": [induced]}, lexicon)
    table = report.pivot()
    assert table.loc["parser", "loving"] == 3.0
    assert table.loc["aclt", "loving"] == 1.0
    assert report.shortening("parser", "aclt") == pytest.approx(2.0 / 3.0)
    assert "loving" in report.to_text()


def test_shortening_is_undefined_without_measured_distances():
    inst = _loving_instance()
    absent = Lexicon(frozenset({"zzqxv"}), frozenset())
    report = distance_report([inst], {"parser": trees_from_parse([inst]), "aclt": trees_from_parse([inst])}, absent)
    assert report.shortening("parser", "aclt") is None
    assert report.to_dict()["overall"]["aclt"] == {"mean": None, "count": 0}
    with pytest.raises(KeyError):
        report.shortening("mtt", "aclt")


def test_distance_report_counts_missing_trees():
    inst = Instance(["great", "food"], (1, 2), "positive", id="x")
    lexicon = Lexicon(frozenset({"great"}), frozenset())
    report = distance_report([inst], {"parser": trees_from_parse([inst])}, lexicon)
    assert report.skipped["parser"] == 1 and report.rows == []


def test_distance_report_top_k():
    data = [
        Instance(["good", "good", "great", "food"], (3, 4), "positive", id="1"),
        Instance(["bad", "awful", "awful", "food"], (3, 4), "negative", id="2"),
    ]
    lexicon = Lexicon(frozenset({"good", "great"}), frozenset({"bad", "awful"}))
    chain = [Arborescence.from_parse_heads([1, 2, 3, -1])] * 2
    report = distance_report(data, {"parser": chain}, lexicon, top_k=1)
    assert report.words == ["good", "awful"]


def test_root_consistency():
    data = [_loving_instance(), Instance(["great", "food"], (1, 2), "positive", (1, -1), id="b")]
    at_aspect = [Arborescence.from_parse_heads([2, 2, -1, 2, 3, 4]), Arborescence.from_parse_heads([1, -1])]
    elsewhere = [Arborescence.from_parse_heads([-1, 5, 3, 4, 5, 0]), Arborescence.from_parse_heads([-1, 0])]
    assert root_consistency(data, at_aspect).to_dict() == {"consistent": 2, "total": 2, "percentage": 100.0}
    assert root_consistency(data, elsewhere).consistent == 0
    frame = root_consistency_frame({"good": root_consistency(data, at_aspect)})
    assert frame.loc["good", "inconsistent"] == 0
    with pytest.raises(ValueError):
        root_consistency(data, at_aspect[:1])


def test_root_consistency_with_node0_offset():
    inst = Instance(["great", "food"], (1, 2), "positive", id="a")
    tree = Arborescence((2, 2, ROOT), 2, 0.0, token_offset=1)
    assert root_consistency([inst], [tree]).consistent == 1


def test_tree_dump_round_trip(tmp_path):
    inst = Instance(["great", "food"], (1, 2), "positive", id="s1")
    tree = Arborescence((2, 2, ROOT), 2, 0.0, token_offset=1)
    probs = np.array([0.1, 0.2, 0.7])
    path = tmp_path / "dump.tsv"
    assert write_tree_dump(path, [(inst, tree, probs)], {"train.seed": 13}) == 1
    text = path.read_text(encoding="utf-8")
    assert text.startswith("# config = ")
    assert "2\tfood\tROOT\t0.70000000" in text
    [block] = read_tree_dump(path)
    assert block.id == "s1" and block.tokens == ["great", "food"]
    assert block.tree.heads == tree.heads and block.tree.token_offset == 1
    np.testing.assert_allclose(block.root_probs, probs)


def test_tree_dump_to_stream():
    inst = Instance(["food"], (0, 1), "neutral", id="one")
    buffer = io.StringIO()
    write_tree_dump(buffer, [(inst, Arborescence((ROOT, 0), 0, 0.0, 1), np.array([1.0, 0.0]))])
    assert buffer.getvalue().count("# id = ") == 1
