"""In-memory composition of the four stages: sample, judge, train, rank.

The CLI runs the same steps through files; this module is what a sweep cell
and the experiment tests call directly.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, replace
from typing import Iterable, Mapping

import numpy as np

from .corpus import Dataset, DatasetSplit
from .evaluation import evaluate_run
from .prp import aggregate, build_matrix, labels_from_aggregate
from .sampling import Budget, SampledPairSet, pair_universe, pairs_to_indices, sample_pairs_for_query
from .student import ModelSpec, TrainConfig, predict_run, train
from .teacher import JudgmentStore, Teacher, discretize_array, judge_pairs


def sample_queries(dataset: Dataset, queries: Iterable[str], strategy: str, budget: Budget, seed: int) -> dict[str, SampledPairSet]:
    return {q: sample_pairs_for_query(dataset.candidates[q], strategy, budget, seed) for q in sorted(queries)}


def judge_sampled(teacher: Teacher, sampled: Mapping[str, SampledPairSet], store: JudgmentStore, both_directions: bool = True) -> int:
    """Judge every sampled pair; returns the number of new teacher calls."""
    calls = 0
    for q in sorted(sampled):
        calls += judge_pairs(teacher, q, sampled[q].doc_pairs(), store, both_directions, return_judgments=False)
    return calls


def pair_labels(dataset: Dataset, sampled: Mapping[str, SampledPairSet | list], store: JudgmentStore, label_mode: str = "hard") -> dict[str, tuple[np.ndarray, np.ndarray]]:
    """``{qid: (pairs, (y_ij, y_ji))}`` from stored judgments of both directions.

    ``sampled`` maps each query to its sampled pairs, as a
    :class:`SampledPairSet` or a list of ``(doc_a, doc_b)``.

    Hard labels are the discretized judgments, soft labels the raw
    probabilities.
    """
    out = {}
    for q in sorted(sampled):
        cs = dataset.candidates[q]
        doc_pairs = sampled[q].doc_pairs() if isinstance(sampled[q], SampledPairSet) else list(sampled[q])
        firsts = [a for a, _ in doc_pairs]
        seconds = [b for _, b in doc_pairs]
        p_ij = store.lookup(q, firsts, seconds)
        p_ji = store.lookup(q, seconds, firsts)
        if np.isnan(p_ij).any() or np.isnan(p_ji).any():
            raise ValueError(f"query {q}: pairwise training needs judgments in both directions for every sampled pair")
        if label_mode == "hard":
            p_ij = discretize_array(p_ij, store.tie_threshold)
            p_ji = discretize_array(p_ji, store.tie_threshold)
        out[q] = (pairs_to_indices(cs, doc_pairs), np.column_stack([p_ij, p_ji]))
    return out


def aggregated_labels(dataset: Dataset, queries: Iterable[str], store: JudgmentStore) -> dict[str, tuple[np.ndarray, np.ndarray]]:
    """Labels for every ordered pair derived from fully aggregated judgments."""
    out = {}
    for q in sorted(queries):
        cs = dataset.candidates[q]
        scores = aggregate(build_matrix(store.judgments(q), cs))
        out[q] = labels_from_aggregate(scores)
    return out


def pointwise_labels(teacher: Teacher, dataset: Dataset, queries: Iterable[str]) -> dict[tuple[str, str], float]:
    return {(q, d): teacher.pointwise_score(q, d) for q in sorted(queries) for d in dataset.candidates[q].docs}


@dataclass(frozen=True)
class CellResult:
    strategy: str
    budget: str
    seed: int
    teacher_calls: int
    judged_pairs: int
    wall_clock_seconds: float
    opa: float | None
    ndcg10: float | None

    def as_row(self) -> dict:
        return {
            "teacher_calls": self.teacher_calls,
            "wall_clock_seconds": self.wall_clock_seconds,
            "opa": self.opa,
            "ndcg10": self.ndcg10,
        }


def run_cell(
    dataset: Dataset,
    split: DatasetSplit,
    teacher: Teacher,
    store: JudgmentStore,
    *,
    strategy: str = "random",
    budget: Budget = Budget(fraction=1.0),
    seed: int = 0,
    model_spec: ModelSpec | None = None,
    config: TrainConfig | None = None,
    aggregate_full: bool = False,
    both_directions: bool = True,
    eval_queries: Iterable[str] | None = None,
) -> CellResult:
    """Sample, judge, train and evaluate one configuration.

    ``config.loss == "pointwise_mse"`` trains on pointwise teacher scores and
    ignores the sampling arguments. ``aggregate_full`` trains on labels from
    full-pair aggregation and requires the full budget.
    """
    model_spec = model_spec or ModelSpec("linear", dataset.features.dim)
    config = replace(config or TrainConfig(), seed=seed)
    start = time.perf_counter()
    calls_before = teacher.calls
    train_queries = sorted(split.train)
    if config.loss == "pointwise_mse":
        labels = pointwise_labels(teacher, dataset, train_queries)
        judged = len(labels)
    else:
        sampled = sample_queries(dataset, train_queries, strategy, budget, seed)
        judge_sampled(teacher, sampled, store, both_directions)
        judged = sum(len(s) for s in sampled.values())
        if aggregate_full:
            for q in train_queries:
                if len(sampled[q]) != len(pair_universe(len(dataset.candidates[q]))):
                    raise ValueError("aggregation needs the full pair budget")
            labels = aggregated_labels(dataset, train_queries, store)
        else:
            labels = pair_labels(dataset, sampled, store, config.label_mode)
    params, _ = train(dataset, labels, split, model_spec, config)
    queries = sorted(eval_queries if eval_queries is not None else split.test)
    report = evaluate_run(predict_run(params, dataset, queries), dataset.qrels, ("opa", "ndcg@10"))
    means = report.means
    return CellResult(
        strategy=strategy if config.loss == "pairwise_logistic" else "pointwise",
        budget=str(budget),
        seed=seed,
        teacher_calls=teacher.calls - calls_before,
        judged_pairs=judged,
        wall_clock_seconds=time.perf_counter() - start,
        opa=means["opa"],
        ndcg10=means["ndcg@10"],
    )
