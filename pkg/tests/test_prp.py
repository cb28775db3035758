import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pairdistill.corpus import CandidateSet, RelevanceJudgments
from pairdistill.prp import CoverageError, aggregate, build_matrix, labels_from_aggregate, prp_pipeline, rank_by_scores
from pairdistill.teacher import JudgmentStore, PairJudgment, TeacherSpec, judge_pairs, make_teacher


def _cs(n, query="q"):
    return CandidateSet.from_scores(query, {f"d{i + 1}": float(n - i) for i in range(n)})


def _judgments(matrix, cs):
    docs = cs.docs
    return [
        PairJudgment(cs.query, docs[i], docs[j], float(matrix[i][j]), float(matrix[i][j]))
        for i in range(len(docs))
        for j in range(len(docs))
        if i != j
    ]


def _hand_aggregate(c):
    n = len(c)
    return [sum(c[i][j] + (1 - c[j][i]) for j in range(n) if j != i) for i in range(n)]


def test_build_matrix_two_docs():
    cs = _cs(2)
    m = build_matrix(_judgments([[0, 1], [0, 0]], cs), cs)
    assert m[0, 1] == 1 and m[1, 0] == 0
    assert np.isnan(m[0, 0]) and np.isnan(m[1, 1])


def test_build_matrix_names_missing_pair():
    cs = _cs(3)
    js = [j for j in _judgments(np.full((3, 3), 0.5), cs) if (j.first, j.second) != ("d3", "d1")]
    with pytest.raises(CoverageError) as err:
        build_matrix(js, cs)
    assert err.value.missing == [("d3", "d1")]
    assert "(d3, d1)" in str(err.value)


def test_aggregate_consistent_three():
    c = [[0, 1, 1], [0, 0, 1], [0, 0, 0]]
    assert list(aggregate(np.array(c, dtype=float))) == [4, 2, 0]
    assert _hand_aggregate(c) == [4, 2, 0]


def test_aggregate_two():
    assert list(aggregate(np.array([[0, 1], [0, 0]], dtype=float))) == [2, 0]


def test_aggregate_indifferent():
    n = 5
    assert list(aggregate(np.full((n, n), 0.5))) == [n - 1] * n


matrices = st.integers(2, 8).flatmap(
    lambda n: st.lists(st.lists(st.sampled_from([0.0, 0.5, 1.0]), min_size=n, max_size=n), min_size=n, max_size=n)
)


@settings(max_examples=100, deadline=None)
@given(matrices)
def test_aggregate_matches_hand_sum_and_conserves(c):
    n = len(c)
    scores = aggregate(np.array(c))
    assert np.allclose(scores, _hand_aggregate(c))
    assert scores.sum() == n * (n - 1)
    assert np.all((scores >= 0) & (scores <= 2 * (n - 1)))


@settings(max_examples=60, deadline=None)
@given(matrices, st.data())
def test_aggregate_monotone(c, data):
    n = len(c)
    i = data.draw(st.integers(0, n - 1))
    j = data.draw(st.integers(0, n - 1).filter(lambda x: x != i))
    raised = [row[:] for row in c]
    raised[i][j] = 1.0
    before, after = aggregate(np.array(c)), aggregate(np.array(raised))
    assert after[i] >= before[i]
    others = [k for k in range(n) if k != i]
    # raising c_ij moves s_j down (through the 1 - c_ij term) but no other document
    assert all(after[k] == before[k] for k in others if k != j)


def test_rank_by_scores():
    cs = _cs(3)
    assert [d for d, _ in rank_by_scores([4, 2, 0], cs)] == ["d1", "d2", "d3"]
    assert [d for d, _ in rank_by_scores([1, 1, 1], cs)] == cs.docs
    assert [d for d, _ in rank_by_scores([0, 0, 5], cs)] == ["d3", "d1", "d2"]


def _oracle(grades, query="q"):
    qrels = RelevanceJudgments()
    for i, g in enumerate(grades):
        qrels[(query, f"d{i + 1}")] = int(g)
    return make_teacher(TeacherSpec("oracle"), qrels), qrels


def test_oracle_matrix_antisymmetric():
    teacher, _ = _oracle([3, 0, 2, 1])
    cs = _cs(4)
    store = JudgmentStore()
    pairs = [(a, b) for a in cs.docs for b in cs.docs if a != b]
    m = build_matrix(judge_pairs(teacher, "q", pairs, store), cs)
    off = ~np.eye(4, dtype=bool)
    assert np.array_equal(m[off], (1 - m.T)[off])


def test_prp_pipeline_sorts_by_grade_and_counts_calls():
    rng = np.random.default_rng(0)
    grades = rng.permutation(12)
    teacher, qrels = _oracle(grades)
    cs = _cs(12)
    ranking = prp_pipeline(teacher, cs)
    ranked_grades = [qrels.grade("q", d) for d, _ in ranking]
    assert ranked_grades == sorted(grades, reverse=True)
    assert teacher.calls == 12 * 11


def test_prp_pipeline_singleton():
    teacher, _ = _oracle([1])
    cs = _cs(1)
    assert prp_pipeline(teacher, cs) == [("d1", 0.0)]
    assert teacher.calls == 0


def test_labels_from_aggregate():
    pairs, labels = labels_from_aggregate([4, 2])
    assert pairs.tolist() == [[0, 1], [1, 0]]
    assert labels.tolist() == [[1, 0], [0, 1]]
    _, tie = labels_from_aggregate([3, 3])
    assert tie.tolist() == [[0.5, 0.5], [0.5, 0.5]]


def test_labels_from_aggregate_total_order():
    scores = [4, 2, 0]
    pairs, labels = labels_from_aggregate(scores)
    assert len(pairs) == 6
    prefers = {(int(a), int(b)) for (a, b), (y_ij, _) in zip(pairs, labels) if y_ij == 1}
    assert prefers == {(0, 1), (0, 2), (1, 2)}
    for x, y, z in itertools.permutations(range(3)):
        if (x, y) in prefers and (y, z) in prefers:
            assert (x, z) in prefers
