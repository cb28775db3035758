import io

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pairdistill.corpus import (
    CandidateSet,
    FeatureStore,
    FormatError,
    SyntheticSpec,
    generate_synthetic,
    make_split,
    parse_features,
    parse_qrels,
    parse_trec_run,
    write_features,
    write_qrels,
    write_trec_run,
)
from pairdistill.evaluation import opa


def test_parse_qrels_single_line():
    assert parse_qrels("q1 0 dA 3\n") == {("q1", "dA"): 3}


def test_parse_qrels_empty():
    assert parse_qrels(io.StringIO("")) == {}


def test_parse_qrels_bad_grade_reports_line():
    with pytest.raises(FormatError) as err:
        parse_qrels("q1 0 dA x\n")
    assert err.value.line == 1


def test_parse_qrels_negative_grade():
    with pytest.raises(ValueError, match="negative"):
        parse_qrels("q1 0 dA 1\nq1 0 dB -1\n")


def test_parse_qrels_last_duplicate_wins_and_missing_is_zero():
    qrels = parse_qrels("q1 0 dA 1\n\nq1 0 dA 2\n")
    assert qrels[("q1", "dA")] == 2
    assert qrels.grade("q1", "nope") == 0


def test_parse_qrels_wrong_field_count():
    with pytest.raises(FormatError, match="line 2"):
        parse_qrels("q1 0 dA 1\nq1 dB 2\n")


def test_run_sorted_by_score():
    (cs,) = parse_trec_run("q1 Q0 dA 1 2.0 t\nq1 Q0 dB 2 5.0 t\n")
    assert cs.docs == ["dB", "dA"]
    assert list(cs.ranks) == [1, 2]


def test_run_duplicate_doc_rejected():
    with pytest.raises(FormatError, match="duplicate"):
        parse_trec_run("q1 Q0 dA 1 2.0 t\nq1 Q0 dA 2 1.0 t\n")


def test_run_non_numeric_score():
    with pytest.raises(FormatError):
        parse_trec_run("q1 Q0 dA 1 high t\n")


def test_run_hundred_docs_per_query():
    lines = "".join(f"q{q} Q0 d{i} {i + 1} {100 - i}.5 bm25\n" for q in range(2) for i in range(100))
    runs = parse_trec_run(lines)
    assert [len(cs) for cs in runs] == [100, 100]


def test_ties_broken_by_doc_id():
    cs = CandidateSet.from_scores("q", {"b": 1.0, "a": 1.0, "c": 2.0})
    assert cs.docs == ["c", "a", "b"]


def test_ids_without_whitespace():
    with pytest.raises(ValueError):
        CandidateSet.from_scores("q 1", {"a": 1.0})


def test_write_run_round_trip_and_ranks():
    runs = [CandidateSet.from_scores("q2", {"x": 0.5, "y": -1.25}), CandidateSet.from_scores("q1", {"a": 3.0})]
    text = write_trec_run(runs, "tag")
    assert [line.split()[3] for line in text.splitlines()] == ["1", "1", "2"]
    assert parse_trec_run(text) == sorted(runs, key=lambda c: c.query)
    assert write_trec_run(parse_trec_run(text), "tag") == text


def test_write_run_empty():
    assert write_trec_run([], "tag") == ""


@settings(max_examples=50, deadline=None)
@given(st.dictionaries(st.from_regex(r"[a-z0-9]{1,6}", fullmatch=True), st.integers(-10**6, 10**6), min_size=1, max_size=20))
def test_run_round_trip_property(scores):
    cs = CandidateSet.from_scores("q", {d: s / 1000 for d, s in scores.items()})
    (back,) = parse_trec_run(write_trec_run([cs], "t"))
    assert back == cs
    s = back.scores
    assert np.all(s[:-1] >= s[1:])


@settings(max_examples=50, deadline=None)
@given(st.dictionaries(st.tuples(st.sampled_from(["q1", "q2"]), st.from_regex(r"d[0-9]{1,3}", fullmatch=True)), st.integers(0, 4)))
def test_qrels_round_trip_property(qrels):
    assert parse_qrels(write_qrels(qrels)) == qrels


def test_features_round_trip():
    store = FeatureStore(3, {("q1", "a"): [0.1, -2.0, 1e-300], ("q1", "b"): [1 / 3, 0.0, 5.0]})
    back = parse_features(write_features(store))
    assert back.dim == 3
    for key in store:
        assert np.array_equal(back[key], store[key])


def test_features_need_header_and_dim():
    with pytest.raises(FormatError):
        parse_features("q1\ta\t1.0\n")
    with pytest.raises(FormatError):
        parse_features("#dim=2\nq1\ta\t1.0\n")


def test_split_sizes_seven_one_two():
    split = make_split([f"q{i}" for i in range(10)], (0.7, 0.1, 0.2), seed=7)
    assert split.sizes() == (7, 1, 2)


def test_split_all_train():
    queries = [f"q{i}" for i in range(5)]
    split = make_split(queries, (1, 0, 0), seed=1)
    assert split.train == frozenset(queries)


def test_split_deterministic():
    queries = [f"q{i}" for i in range(30)]
    assert make_split(queries, seed=4) == make_split(queries, seed=4)


def test_split_too_few_queries():
    with pytest.raises(ValueError):
        make_split(["q1", "q2"], (0.7, 0.1, 0.2))


def test_split_bad_ratios():
    with pytest.raises(ValueError):
        make_split(["q1", "q2", "q3"], (0.5, 0.5, 0.5))


@settings(max_examples=60, deadline=None)
@given(
    n=st.integers(3, 60),
    seed=st.integers(0, 2**31),
    parts=st.tuples(st.integers(1, 20), st.integers(0, 20), st.integers(0, 20)),
)
def test_split_is_partition(n, seed, parts):
    total = sum(parts)
    ratios = (parts[0] / total, parts[1] / total, 1 - parts[0] / total - parts[1] / total)
    ratios = tuple(max(0.0, r) for r in ratios)
    queries = [f"q{i}" for i in range(n)]
    split = make_split(queries, ratios, seed)
    assert split.train | split.validation | split.test == set(queries)
    assert sum(split.sizes()) == n


def test_synthetic_counts():
    ds = generate_synthetic(SyntheticSpec(num_queries=200, docs_per_query=100), seed=0)
    assert len(ds.features) == 20000
    assert len(ds.candidates) == 200


def test_synthetic_deterministic():
    spec = SyntheticSpec(num_queries=5, docs_per_query=8, feature_dim=3)
    a, b = generate_synthetic(spec, 9), generate_synthetic(spec, 9)
    assert a.candidates == b.candidates
    assert a.qrels == b.qrels
    assert write_features(a.features) == write_features(b.features)


def test_synthetic_zero_noise_initial_ranking_matches_grades():
    spec = SyntheticSpec(num_queries=10, docs_per_query=40, feature_dim=5, label_noise_sd=0, initial_ranking_noise_sd=0)
    ds = generate_synthetic(spec, 2)
    for q, cs in ds.candidates.items():
        grades = ds.qrels.grades(q, cs.docs)
        assert np.all(grades[:-1] >= grades[1:])
        assert opa(cs.scores, grades) == 1.0


def test_synthetic_grade_buckets_balanced():
    ds = generate_synthetic(SyntheticSpec(num_queries=3, docs_per_query=20, num_grades=4), 1)
    for q, cs in ds.candidates.items():
        counts = np.bincount(ds.qrels.grades(q, cs.docs).astype(int), minlength=4)
        assert list(counts) == [5, 5, 5, 5]


def test_synthetic_spec_rejects_too_few_docs():
    with pytest.raises(ValueError, match="num_grades"):
        SyntheticSpec(docs_per_query=3, num_grades=4)
