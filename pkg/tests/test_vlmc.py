import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from subcoda.symbols import DiscretizationConfig, SymbolStream
from subcoda.vlmc import (
    ContextNode,
    ContextTree,
    GenerationError,
    aic,
    classify,
    context_lookup,
    count_subsequences,
    default_threshold,
    fit,
    generate,
    information_gain,
    log_likelihood,
    n_parameters,
    prune,
)

import oracles
from planted import CLAN_A, END, N, tree_from_table

A, B, C = 0, 1, 2

streams = st.integers(2, 4).flatmap(
    lambda n: st.tuples(st.just(n), st.lists(st.integers(0, n - 1), min_size=2, max_size=40))
)


def make_tree(table, n, depth=None, **kw):
    nodes = {tuple(c): ContextNode(tuple(c), np.array(v)) for c, v in table.items()}
    depth = max(len(c) for c in nodes) if depth is None else depth
    return ContextTree(n, depth, 0.0, nodes, **kw)


# counting


def test_counts_abab():
    sat = count_subsequences([A, B, A, B], 2, alphabet_size=2)
    assert (sat.count((A,)), sat.count((B,)), sat.count((A, B)), sat.count((B, A))) == (2, 1, 1, 1)
    assert sat.count(()) == 3
    assert sat.count((B, B)) == 0 and (B, B) not in sat


def test_counts_aaaa():
    sat = count_subsequences([A] * 4, 2, alphabet_size=2)
    assert sat.count((A,)) == 3 and sat.count((A, A)) == 2
    assert sat.child_counts((A, A)) == {A: 2}


def test_depth_capped_by_stream():
    sat = count_subsequences([A, B, A], 10, alphabet_size=2)
    assert sat.depth <= 2
    assert max(len(w) for w in sat.contexts()) <= 2


def test_count_errors():
    with pytest.raises(ValueError):
        count_subsequences([A], 2, alphabet_size=2)
    with pytest.raises(ValueError):
        count_subsequences([A, B], 0, alphabet_size=2)
    with pytest.raises(ValueError):
        count_subsequences([A, 5], 2, alphabet_size=2)


@settings(max_examples=100, deadline=None)
@given(streams, st.integers(1, 5))
def test_counts_match_oracle(case, depth):
    n, x = case
    sat = count_subsequences(x, depth, alphabet_size=n)
    expected = oracles.brute_counts(x, depth)
    assert set(sat.contexts()) == set(expected)
    for w, c in expected.items():
        assert sat.child_counts(w) == dict(c)
        assert sat.count(w) == sum(c.values())


@settings(max_examples=100, deadline=None)
@given(streams, st.integers(1, 5))
def test_child_counts_bounded_by_parent(case, depth):
    n, x = case
    sat = count_subsequences(x, depth, alphabet_size=n)
    for w in sat.contexts():
        if w:
            parent = sat.child_counts(w[1:])
            assert all(c <= parent[s] for s, c in sat.child_counts(w).items())


# information gain and threshold


def test_gain_identical_is_zero():
    w = ContextNode((A,), np.array([3, 6]))
    u = ContextNode((), np.array([10, 20]))
    assert information_gain(w, u) == pytest.approx(0.0, abs=1e-12)


def test_gain_closed_form():
    w = ContextNode((A,), np.array([10, 0]))
    u = ContextNode((), np.array([5, 5]))
    assert information_gain(w, u) == pytest.approx(10 * math.log(2))
    assert information_gain(w, u) == pytest.approx(6.931, abs=1e-3)


def test_gain_requires_suffix():
    with pytest.raises(ValueError):
        information_gain(ContextNode((A, B), np.array([1, 1])), ContextNode((A,), np.array([1, 1])))


def test_period3_disambiguating_context():
    x = [A, A, B] * 200
    sat = count_subsequences(x, 3, alphabet_size=2)
    g = sat.gains()
    best_short = max(v for w, v in g.items() if len(w) == 1)
    assert g[(A, A)] > best_short
    assert g[(B, A)] > best_short


@settings(max_examples=100, deadline=None)
@given(streams, st.integers(1, 4))
def test_gains_match_oracle(case, depth):
    n, x = case
    sat = count_subsequences(x, depth, alphabet_size=n)
    expected = oracles.brute_gains(oracles.brute_counts(x, depth))
    got = sat.gains()
    assert got.keys() == expected.keys()
    for w, v in expected.items():
        assert got[w] >= 0
        assert got[w] == pytest.approx(max(v, 0.0), rel=1e-9, abs=1e-9)


# Frozen from a 30-digit bisection on the regularized incomplete gamma
# (oracles.chi2_quantile); re-derived in test_threshold_oracle_agrees.
FROZEN_THRESHOLDS = {21: 15.705216, 2: 1.920729, 11: 9.153519}


@pytest.mark.parametrize("n, k", [(21, 15.705), (2, 1.921), (11, 9.154)])
def test_default_threshold(n, k):
    assert default_threshold(n) == pytest.approx(k, abs=5e-4)
    assert default_threshold(n) == pytest.approx(FROZEN_THRESHOLDS[n], abs=1e-6)


def test_threshold_oracle_agrees():
    for n, k in FROZEN_THRESHOLDS.items():
        assert 0.5 * oracles.chi2_quantile(0.95, n - 1) == pytest.approx(k, abs=1e-6)


def test_threshold_rejects_tiny_alphabet():
    with pytest.raises(ValueError):
        default_threshold(1)


# pruning and fit


def test_alternation_keeps_first_order():
    tree = fit([A, B] * 5000, alphabet_size=2)
    assert set(tree.contexts()) == {(), (A,), (B,)}


def test_infinite_threshold_root_only():
    rng = np.random.default_rng(0)
    tree = fit(rng.integers(0, 3, 500), threshold=math.inf, alphabet_size=3)
    assert tree.contexts() == [()]
    assert tree.depth == 0


@pytest.mark.xfail(
    reason="every saturated node is tested at the 5% level, so with hundreds of nodes "
    "an i.i.d. uniform stream almost never prunes to the root (0/100 observed)",
    strict=False,
)
def test_uniform_iid_prunes_to_root():
    hits = sum(
        fit(np.random.default_rng(seed).integers(0, 4, 10_000), alphabet_size=4).depth == 0 for seed in range(100)
    )
    assert hits >= 95


@settings(max_examples=200, deadline=None)
@given(streams, st.integers(1, 4), st.floats(0.0, 5.0))
def test_fit_matches_oracle(case, depth, k):
    n, x = case
    tree = fit(x, depth, threshold=k, alphabet_size=n)
    gains = oracles.brute_gains(oracles.brute_counts(x, depth))
    assert set(tree.contexts()) == oracles.brute_keep(gains, k)


@settings(max_examples=100, deadline=None)
@given(streams, st.integers(1, 4), st.floats(0.0, 3.0), st.floats(0.0, 3.0))
def test_prune_invariants(case, depth, k1, k2):
    n, x = case
    sat = count_subsequences(x, depth, alphabet_size=n)
    lo, hi = sorted((k1, k2))
    t_lo, t_hi = prune(sat, lo), prune(sat, hi)
    assert set(t_hi.contexts()) <= set(t_lo.contexts()) <= set(sat.contexts())
    for w in t_lo.contexts():
        assert all(w[i:] in t_lo for i in range(len(w) + 1))
        assert len(w) <= depth


def test_fit_deterministic():
    x = np.random.default_rng(1).integers(0, 4, 3000)
    assert fit(x, alphabet_size=4) == fit(x, alphabet_size=4)


def test_doubling_sample_keeps_contexts():
    from planted import planted_clans
    from subcoda.symbols import encode_records

    s = encode_records(planted_clans(2, n_samples=1, n_codas=1500).records())
    t1 = fit(s)
    doubled = SymbolStream(np.concatenate([s.symbols, s.symbols]), s.alphabet_size)
    t2 = fit(doubled)
    assert set(t1.contexts()) <= set(t2.contexts())


def test_fit_stamps_config():
    cfg = DiscretizationConfig(0.1, 1.0)
    tree = fit(SymbolStream(np.array([1, 2, 10, 1, 10]), 11), config=cfg)
    assert (tree.delta_t, tree.t_max) == (0.1, 1.0)
    with pytest.raises(ValueError):
        fit(SymbolStream(np.array([1, 2, 20]), 21), config=cfg)


def test_tree_validation():
    with pytest.raises(ValueError, match="suffix"):
        make_tree({(): [1, 1], (A, B): [1, 0]}, 2)
    with pytest.raises(ValueError, match="root"):
        make_tree({(A,): [1, 1]}, 2)
    with pytest.raises(ValueError, match="deeper"):
        make_tree({(): [1, 1], (A,): [1, 0]}, 2, depth=0)


def test_json_round_trip(tmp_path):
    x = np.random.default_rng(4).integers(0, 3, 2000)
    tree = fit(x, alphabet_size=3, threshold=0.5)
    tree.save(tmp_path / "t.json")
    again = ContextTree.load(tmp_path / "t.json")
    assert again == tree
    assert again.dumps() == tree.dumps()
    doc = tree.to_dict()
    assert set(doc) >= {"alphabet_size", "delta_t", "t_max", "D", "K", "contexts"}
    doc["contexts"][0]["count"] += 1
    with pytest.raises(ValueError):
        ContextTree.from_dict(doc)


# lookup and scoring


def test_context_lookup():
    tree = make_tree({(): [1, 1, 1], (A,): [1, 0, 0], (B, A): [0, 1, 0]}, 3)
    assert context_lookup(tree, []).context == ()
    assert context_lookup(tree, [C, B, A]).context == (B, A)
    assert context_lookup(tree, [A, A]).context == (A,)
    assert context_lookup(tree, [C]).context == ()


def test_loglik_deterministic_stream():
    x = [A, B] * 500
    tree = fit(x, alphabet_size=2)
    assert log_likelihood(tree, x, alpha=0, start=1) == 0.0
    ll = log_likelihood(tree, x, start=1)
    assert ll < 0 and abs(ll) < 1e-3 * len(x)


def test_loglik_uniform_root():
    tree = make_tree({(): [7, 7, 7, 7]}, 4)
    x = np.random.default_rng(0).integers(0, 4, 100)
    assert log_likelihood(tree, x) == pytest.approx(-100 * math.log(4))


def test_loglik_alphabet_mismatch():
    tree = make_tree({(): [1, 1]}, 2)
    with pytest.raises(ValueError):
        log_likelihood(tree, [0, 3])


def test_generator_scores_itself_higher():
    ta = tree_from_table(CLAN_A)
    other = tree_from_table({(): {3: 0.25, 4: 0.25, 6: 0.25, END: 0.25}})
    wins = 0
    for seed in range(20):
        codas = generate(ta, 50, seed)
        x = [s for c in codas for s in c]
        wins += log_likelihood(ta, x) > log_likelihood(other, x)
    assert wins == 20


def test_aic_closed_form():
    tree = make_tree({(): [5, 5, 5, 5]}, 4)
    x = np.random.default_rng(0).integers(0, 4, 100)
    assert aic(tree, x) == pytest.approx(2 * 3 + 2 * 100 * math.log(4))
    assert aic(tree, x) == pytest.approx(283.26, abs=5e-3)
    assert n_parameters(tree) == 3


def test_aic_useless_context_increases():
    t1 = make_tree({(): [5, 5, 5, 5]}, 4)
    t2 = make_tree({(): [5, 5, 5, 5], (A,): [2, 2, 2, 2]}, 4)
    x = np.random.default_rng(0).integers(0, 4, 100)
    assert log_likelihood(t1, x) == pytest.approx(log_likelihood(t2, x))
    assert aic(t2, x) > aic(t1, x)


def test_pruned_beats_saturated_on_period3():
    rng = np.random.default_rng(5)
    x = np.array([A, A, B] * 300)
    x[rng.random(x.size) < 0.05] = C  # a little noise so the saturated tree is large
    sat = count_subsequences(x, 10, alphabet_size=3)
    full, pruned = prune(sat, -1.0), prune(sat, default_threshold(3))
    assert len(pruned) < len(full)
    assert aic(pruned, x, alpha=0, start=1) < aic(full, x, alpha=0, start=1)


def test_loglik_drop_bounded_by_removed_gain():
    from planted import planted_clans
    from subcoda.symbols import encode_records

    s = encode_records(planted_clans(0, n_samples=1, n_codas=1000, tables={"A": CLAN_A}).records())
    sat = count_subsequences(s, 10)
    full, pruned = prune(sat, -1.0), prune(sat, default_threshold(N))
    removed = sum(g for w, g in sat.gains().items() if w not in pruned)
    drop = log_likelihood(full, s, alpha=0) - log_likelihood(pruned, s, alpha=0)
    assert n_parameters(pruned) < n_parameters(full)
    assert 0 <= drop <= removed * (1 + 1e-9) + 1e-6


# generation


def cycle_tree():
    n = 21
    counts = {
        (): {4: 3, 20: 1},
        (20,): {4: 1},
        (4,): {4: 2, 20: 1},
        (4, 4): {4: 1, 20: 1},
        (20, 4): {4: 1},
        (4, 4, 4): {20: 1},
        (20, 4, 4): {4: 1},
    }
    table = {}
    for c, v in counts.items():
        row = [0] * n
        for s, k in v.items():
            row[s] = k
        table[c] = row
    return make_tree(table, n)


def test_generate_deterministic_cycle():
    assert generate(cycle_tree(), 25, seed=3) == [[4, 4, 4, 20]] * 25


def test_generate_same_seed():
    t = tree_from_table(CLAN_A)
    assert generate(t, 200, seed=11) == generate(t, 200, seed=11)
    assert generate(t, 200, seed=11) != generate(t, 200, seed=12)


def test_generate_cap():
    t = make_tree({(): [1, 1, 0]}, 3)
    with pytest.raises(GenerationError):
        generate(t, 1, seed=0)
    with pytest.raises(ValueError):
        generate(t, 0, seed=0)


def test_generated_frequencies_within_3_sigma():
    t = tree_from_table(CLAN_A)
    codas = generate(t, 10_000, seed=7)
    first = np.bincount([c[0] for c in codas], minlength=N)
    p = t.lookup([END]).distribution
    n = len(codas)
    sigma = np.sqrt(n * p * (1 - p))
    assert np.all(np.abs(first - n * p) <= 3 * sigma + 1e-9)


def test_generate_fit_consistency():
    t = tree_from_table(CLAN_A)
    x = [s for c in generate(t, 20_000, seed=1) for s in c]
    fitted = fit(x, alphabet_size=N)
    # leaves of the generator: every longer history has the same next-symbol law
    leaves = [(END,), (4,), (6,), (3, 3)]
    assert set(leaves) <= set(fitted.contexts())
    for ctx in leaves:
        p, q = t.nodes[ctx].distribution, fitted.nodes[ctx].distribution
        n = fitted.nodes[ctx].occurrence_count
        assert np.all(np.abs(p - q) <= 4 * np.sqrt(p * (1 - p) / n) + 1e-9)


# classification


def test_classify_deterministic_vs_uniform():
    det = cycle_tree()
    uni = make_tree({(): [1] * 21}, 21)
    coda = generate(det, 1, seed=0)[0]
    assert classify(coda, {"B": uni, "A": det}) == "A"


def test_classify_tie_is_lexicographic():
    t = tree_from_table(CLAN_A)
    assert classify([3, 4, END], {"z": t, "b": t, "m": t}) == "b"


def test_classify_needs_two_same_alphabet():
    t = tree_from_table(CLAN_A)
    with pytest.raises(ValueError):
        classify([3, END], {"a": t})
    with pytest.raises(ValueError):
        classify([1], {"a": t, "b": make_tree({(): [1, 1]}, 2)})


SEPARATED_A = {(): {3: 0.4, 5: 0.3, END: 0.3}, (END,): {3: 0.8, 5: 0.2}, (3,): {3: 0.5, END: 0.5}, (5,): {5: 0.5, END: 0.5}}
SEPARATED_B = {(): {3: 0.3, 5: 0.4, END: 0.3}, (END,): {3: 0.2, 5: 0.8}, (3,): {5: 0.5, END: 0.5}, (5,): {3: 0.5, END: 0.5}}


def test_classify_accuracy_separated_clans():
    truth = {"A": tree_from_table(SEPARATED_A), "B": tree_from_table(SEPARATED_B)}
    models = {k: fit([s for c in generate(t, 3000, seed=1) for s in c], alphabet_size=N) for k, t in truth.items()}
    correct = total = 0
    for label, t in truth.items():
        for coda in generate(t, 1000, seed=2):
            correct += classify(coda, models) == label
            total += 1
    assert correct / total >= 0.85
