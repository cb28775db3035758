"""Full pairwise ranking: comparison matrix, bidirectional aggregation, sorting."""

from __future__ import annotations

from typing import Iterable, Sequence

import numpy as np

from .corpus import CandidateSet
from .teacher import JudgmentStore, PairJudgment, Teacher, judge_pairs
from .sampling import pair_universe


class CoverageError(ValueError):
    """Raised when a comparison matrix is missing ordered pairs."""

    def __init__(self, missing: Sequence[tuple[str, str]]):
        self.missing = list(missing)
        shown = ", ".join(f"({a}, {b})" for a, b in self.missing[:10])
        more = f" and {len(self.missing) - 10} more" if len(self.missing) > 10 else ""
        super().__init__(f"{len(self.missing)} ordered pairs not judged: {shown}{more}")


def build_matrix(judgments: Iterable[PairJudgment], candidate_set: CandidateSet) -> np.ndarray:
    """``matrix[i, j]`` is the discretized judgment of candidate ``i`` listed before ``j``.

    Every off-diagonal cell must be covered; the diagonal is NaN.
    """
    docs = candidate_set.docs
    pos = {d: i for i, d in enumerate(docs)}
    n = len(docs)
    matrix = np.full((n, n), np.nan)
    for j in judgments:
        if j.query != candidate_set.query:
            continue
        if j.first in pos and j.second in pos:
            matrix[pos[j.first], pos[j.second]] = j.c
    off = ~np.eye(n, dtype=bool)
    holes = np.argwhere(np.isnan(matrix) & off)
    if len(holes):
        raise CoverageError([(docs[a], docs[b]) for a, b in holes])
    return matrix


def aggregate(matrix: np.ndarray) -> np.ndarray:
    """Score each document by ``sum_j c_ij + (1 - c_ji)`` over ``j != i``."""
    c = np.array(matrix, dtype=float)
    n = c.shape[0]
    if c.shape != (n, n):
        raise ValueError("comparison matrix must be square")
    off = ~np.eye(n, dtype=bool)
    if np.isnan(c[off]).any():
        raise CoverageError([(str(a), str(b)) for a, b in np.argwhere(np.isnan(c) & off)])
    c[~off] = 0.0
    as_first = c.sum(axis=1)
    as_second = (1.0 - c).sum(axis=0) - 1.0  # drop the zeroed diagonal's (1 - 0)
    return as_first + as_second


def rank_by_scores(scores, candidate_set: CandidateSet) -> list[tuple[str, float]]:
    """Sort candidates by score descending; ties keep the initial ranking order."""
    scores = np.asarray(scores, dtype=float)
    if len(scores) != len(candidate_set):
        raise ValueError(f"got {len(scores)} scores for {len(candidate_set)} candidates")
    order = np.lexsort((np.arange(len(scores)), -scores))
    docs = candidate_set.docs
    return [(docs[i], float(scores[i])) for i in order]


def prp_scores(teacher: Teacher, candidate_set: CandidateSet, store: JudgmentStore | None = None) -> np.ndarray:
    """Judge every ordered pair and aggregate into one score per candidate."""
    n = len(candidate_set)
    if n == 1:
        return np.zeros(1)
    store = store if store is not None else JudgmentStore(tie_threshold=teacher.spec.tie_threshold)
    docs = candidate_set.docs
    pairs = [(docs[a], docs[b]) for a, b in pair_universe(n)]
    judgments = judge_pairs(teacher, candidate_set.query, pairs, store, both_directions=False)
    return aggregate(build_matrix(judgments, candidate_set))


def prp_pipeline(teacher: Teacher, candidate_set: CandidateSet, store: JudgmentStore | None = None) -> list[tuple[str, float]]:
    return rank_by_scores(prp_scores(teacher, candidate_set, store), candidate_set)


def labels_from_aggregate(scores) -> tuple[np.ndarray, np.ndarray]:
    """Pairwise pseudo-labels for every ordered pair induced by aggregate scores.

    Returns ``(pairs, labels)`` where ``labels[:, 0]`` is ``y_ij`` and
    ``labels[:, 1]`` is ``y_ji``: 1/0 for the higher/lower scored document and
    0.5/0.5 on ties.
    """
    scores = np.asarray(scores, dtype=float)
    pairs = pair_universe(len(scores))
    si, sj = scores[pairs[:, 0]], scores[pairs[:, 1]]
    y_ij = np.where(si > sj, 1.0, np.where(si < sj, 0.0, 0.5))
    return pairs, np.column_stack([y_ij, 1.0 - y_ij])

