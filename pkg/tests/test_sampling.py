import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pairdistill.corpus import CandidateSet
from pairdistill.sampling import (
    Budget,
    derive_seed,
    pair_universe,
    parse_pairs,
    resolve_budget,
    sample_pairs_for_query,
    sample_without_replacement,
    strategy_weights,
    successive_sample,
    write_pairs,
)

from conftest import successive_inclusion


@pytest.mark.parametrize("n,count", [(2, 2), (3, 6), (100, 9900)])
def test_universe_size(n, count):
    pairs = pair_universe(n)
    assert len(pairs) == count
    assert np.all(pairs[:, 0] != pairs[:, 1])
    assert [tuple(p) for p in pairs] == sorted(tuple(p) for p in pairs)


def test_universe_too_small():
    with pytest.raises(ValueError):
        pair_universe(1)


def _w(strategy, ranks):
    pairs = pair_universe(len(ranks))
    w = strategy_weights(strategy, ranks, pairs)
    return {tuple(int(v) for v in p): x for p, x in zip(pairs, w)}


def test_rr_weights():
    w = _w("rr", [1, 2, 3])
    assert w[(0, 1)] == 1.0
    assert w[(1, 0)] == 0.5
    assert w[(2, 0)] == pytest.approx(1 / 3)


def test_rrsum_weights():
    w = _w("rrsum", [1, 2])
    assert w[(0, 1)] == w[(1, 0)] == 0.75


def test_rrdiff_weights():
    w = _w("rrdiff", [1, 2])
    assert w[(0, 1)] == w[(1, 0)] == 0.5
    ranks = list(range(1, 11))
    w = _w("rrdiff", ranks)
    assert w[(8, 9)] == pytest.approx(1 / 90)
    assert w[(8, 9)] == pytest.approx(0.0111, abs=5e-5)


def test_random_weights_uniform():
    assert set(_w("random", [2, 1, 3]).values()) == {1.0}


def test_weights_need_permutation():
    with pytest.raises(ValueError):
        strategy_weights("rr", [1, 1, 3])
    with pytest.raises(ValueError):
        strategy_weights("bogus", [1, 2])


def test_zero_weight_drawn_last():
    for seed in range(200):
        order = sample_without_replacement(["a", "b", "c", "d"], [2, 1, 1, 0], 4, seed)
        assert order[-1] == "d"


def test_full_draw_returns_universe():
    pairs = [tuple(p) for p in pair_universe(4)]
    got = sample_without_replacement(pairs, np.ones(len(pairs)), len(pairs), seed=5)
    assert sorted(got) == sorted(pairs)


def test_exhausted_positive_weights_fall_back_to_uniform():
    counts = np.zeros(4)
    draws = successive_sample([1, 0, 0, 0], 2, seed=0, size=40000)
    assert np.all(draws[:, 0] == 0)
    counts += np.bincount(draws[:, 1], minlength=4)
    assert np.allclose(counts[1:] / 40000, 1 / 3, atol=0.01)


def test_sampling_errors():
    with pytest.raises(ValueError):
        successive_sample([0, 0], 1)
    with pytest.raises(ValueError):
        successive_sample([1, 1], 3)
    with pytest.raises(ValueError):
        successive_sample([1, -1], 1)


def test_inclusion_oracle_example():
    assert successive_inclusion([2, 1, 1], 2) == [pytest.approx(5 / 6), pytest.approx(7 / 12), pytest.approx(7 / 12)]


def test_inclusion_matches_oracle_small():
    draws = successive_sample([2, 1, 1], 2, seed=42, size=100000)
    freq = np.bincount(draws.ravel(), minlength=3) / 100000
    assert np.allclose(freq, [5 / 6, 7 / 12, 7 / 12], atol=0.01)


def test_single_draw_equals_batch_row():
    w = np.array([0.3, 1.0, 0.0, 2.0, 0.5])
    assert np.array_equal(successive_sample(w, 3, seed=8), successive_sample(w, 3, seed=8, size=1)[0])


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(0, 10), min_size=2, max_size=30).filter(lambda w: any(x > 0 for x in w)), st.integers(0, 2**32 - 1), st.data())
def test_draws_distinct_and_deterministic(weights, seed, data):
    k = data.draw(st.integers(1, len(weights)))
    a = successive_sample(weights, k, seed)
    assert len(set(a.tolist())) == k
    assert np.array_equal(a, successive_sample(weights, k, seed))


def test_rr_prefers_top_ranked_first_documents():
    n = 10
    pairs = pair_universe(n)
    w = strategy_weights("rr", np.arange(1, n + 1), pairs)
    draws = successive_sample(w, 5, seed=0, size=10000)
    firsts = pairs[draws, 0]
    assert (firsts == 0).sum() > (firsts == n - 1).sum()


@pytest.mark.parametrize(
    "budget,n,k",
    [(Budget(fraction=0.02), 100, 198), (Budget(fraction=1.0), 7, 42), (Budget(count=10**9), 10, 90), (Budget(fraction=1e-9), 5, 1)],
)
def test_resolve_budget(budget, n, k):
    assert resolve_budget(budget, n) == k


def test_resolve_budget_rounds_half_up():
    # 0.25 * 6 = 1.5 -> 2
    assert resolve_budget(Budget(fraction=0.25), 3) == 2


def test_budget_parse():
    assert Budget.parse("0.02") == Budget(fraction=0.02)
    assert Budget.parse("2%") == Budget(fraction=0.02)
    assert Budget.parse("#50") == Budget(count=50)
    with pytest.raises(ValueError):
        Budget(fraction=1.5)


def _cs(query, n):
    return CandidateSet.from_scores(query, {f"d{i:03d}": float(n - i) for i in range(n)})


def test_sample_full_universe_random():
    s = sample_pairs_for_query(_cs("q", 6), "random", Budget(fraction=1.0), seed=1)
    assert sorted(s.pairs) == sorted(tuple(int(v) for v in p) for p in pair_universe(6))


def test_sample_budget_two_percent():
    s = sample_pairs_for_query(_cs("q", 100), "rr", Budget(fraction=0.02), seed=1)
    assert len(s) == 198
    assert len(set(s.pairs)) == 198
    assert all(a != b for a, b in s.pairs)


def test_per_query_seeds_differ():
    a = sample_pairs_for_query(_cs("q1", 30), "random", Budget(count=20), seed=1)
    b = sample_pairs_for_query(_cs("q2", 30), "random", Budget(count=20), seed=1)
    assert a.pairs != b.pairs
    assert derive_seed(1, "q1") != derive_seed(1, "q2")
    assert a == sample_pairs_for_query(_cs("q1", 30), "random", Budget(count=20), seed=1)


def test_pairs_file_round_trip():
    s = sample_pairs_for_query(_cs("q", 8), "rrsum", Budget(count=5), seed=2)
    parsed = parse_pairs(write_pairs([s]), {"q": _cs("q", 8)})
    assert parsed == {"q": s.doc_pairs()}
