import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.cluster.hierarchy import linkage
from scipy.spatial.distance import squareform

from subcoda.cluster import Dendrogram, adjusted_rand_index, ari_sweep, average_linkage, cut
from subcoda.metric import DistanceMatrix

import oracles

TWO_PAIRS = np.array(
    [
        [0, 0.1, 1.0, 1.0],
        [0.1, 0, 1.0, 1.0],
        [1.0, 1.0, 0, 0.1],
        [1.0, 1.0, 0.1, 0],
    ]
)


def random_matrix(seed, n):
    rng = np.random.default_rng(seed)
    p = rng.random((n, 4))
    return np.sqrt(((p[:, None] - p[None]) ** 2).sum(-1))


def test_two_items():
    d = average_linkage(np.array([[0, 0.7], [0.7, 0]]))
    assert len(d.merges) == 1
    assert d.merges[0].height == 0.7 and d.merges[0].size == 2


def test_two_pairs_trace():
    d = average_linkage(DistanceMatrix(("a", "b", "c", "d"), TWO_PAIRS))
    assert d.heights.tolist() == [0.1, 0.1, 1.0]
    assert [(m.left, m.right) for m in d.merges] == [(0, 1), (2, 3), (4, 5)]
    assert cut(d, 2) == [0, 0, 1, 1]


def test_tie_break_lowest_pair():
    d = average_linkage(np.ones((3, 3)) - np.eye(3))
    assert (d.merges[0].left, d.merges[0].right) == (0, 1)


def test_cut_extremes():
    d = average_linkage(random_matrix(0, 7))
    assert cut(d, 1) == [0] * 7
    assert cut(d, 7) == list(range(7))
    for k in (0, 8):
        with pytest.raises(ValueError):
            cut(d, k)


def test_rejects_asymmetric_and_bad_diagonal():
    with pytest.raises(ValueError):
        average_linkage(np.array([[0, 1], [2, 0]]))
    with pytest.raises(ValueError):
        average_linkage(np.array([[1, 1], [1, 0]]))


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 10_000), st.integers(2, 12))
def test_heights_match_oracles(seed, n):
    m = random_matrix(seed, n)
    d = average_linkage(m)
    assert np.all(np.diff(d.heights) >= -1e-12)
    assert np.allclose(d.heights, oracles.upgma_heights(m.tolist()))
    assert np.allclose(d.heights, linkage(squareform(m, checks=False), "average")[:, 2])


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 10_000), st.integers(3, 12))
def test_cuts_are_nested(seed, n):
    d = average_linkage(random_matrix(seed, n))
    for k in range(1, n):
        coarse, fine = cut(d, k), cut(d, k + 1)
        # every fine cluster sits inside one coarse cluster
        assert all(len({coarse[i] for i in range(n) if fine[i] == f}) == 1 for f in set(fine))
        assert len(set(fine)) == len(set(coarse)) + 1


def test_dendrogram_round_trip_and_newick():
    d = average_linkage(DistanceMatrix(("a", "b", "c", "d"), TWO_PAIRS))
    again = Dendrogram.from_dict(json.loads(d.dumps()))
    assert again == d
    assert d.to_newick() == "((a:0.1,b:0.1):0.9,(c:0.1,d:0.1):0.9);"
    assert d.leaf_order() == [0, 1, 2, 3]
    assert d.linkage_matrix().shape == (3, 4)


def test_newick_quotes_labels():
    d = average_linkage(DistanceMatrix(("x y", "z"), np.array([[0, 1.0], [1.0, 0]])))
    assert d.to_newick() == "('x y':1,z:1);"


def test_dendrogram_merge_count():
    with pytest.raises(ValueError):
        Dendrogram(("a", "b"), ())


def test_ari_examples():
    assert adjusted_rand_index([0, 0, 1, 1], [0, 0, 1, 1]) == 1.0
    assert adjusted_rand_index([0, 0, 1, 1], ["x", "x", "y", "y"]) == 1.0
    # four-point exhaustive pair count gives -1/2
    assert oracles.ari_pairs([0, 0, 1, 1], [0, 1, 0, 1]) == -0.5
    assert adjusted_rand_index([0, 0, 1, 1], [0, 1, 0, 1]) == pytest.approx(-0.5)


def test_ari_errors():
    with pytest.raises(ValueError):
        adjusted_rand_index([0, 1], [0])
    with pytest.raises(ValueError):
        adjusted_rand_index([0], [0])


labelings = st.integers(2, 15).flatmap(
    lambda n: st.tuples(st.lists(st.integers(0, 3), min_size=n, max_size=n), st.lists(st.integers(0, 3), min_size=n, max_size=n))
)


@settings(max_examples=200, deadline=None)
@given(labelings)
def test_ari_matches_pair_oracle(ab):
    a, b = ab
    v = adjusted_rand_index(a, b)
    assert v == pytest.approx(oracles.ari_pairs(a, b), abs=1e-12)
    assert v == pytest.approx(adjusted_rand_index(b, a), abs=1e-12)
    assert -0.5 - 1e-12 <= v <= 1 + 1e-12
    renamed = [f"c{(x * 7 + 3) % 11}" for x in a]
    assert adjusted_rand_index(renamed, b) == pytest.approx(v, abs=1e-12)


def test_sweep_perfect_two_clusters():
    ref = ["A", "A", "B", "B"]
    s = ari_sweep(average_linkage(TWO_PAIRS), ref)
    assert s.best_k == 2 and s.max_ari == 1.0
    assert [k for k, _ in s.scores] == [2, 3, 4]


def test_sweep_random_reference_near_zero():
    hits = 0
    for seed in range(100):
        rng = np.random.default_rng(seed)
        ref = rng.integers(0, 2, 40)
        hits += abs(ari_sweep(average_linkage(random_matrix(seed, 40)), ref).max_ari) < 0.2
    assert hits >= 95


def test_sweep_reference_length():
    with pytest.raises(ValueError):
        ari_sweep(average_linkage(TWO_PAIRS), [0, 1])
