"""Ranking metrics and experiment reports.

Metrics return ``None`` when a query has nothing to measure (no relevant
document, no pair with distinct grades); such queries are left out of means.
"""

from __future__ import annotations

import csv
import io
import math
import statistics
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, Mapping, Sequence

import numpy as np

from .corpus import RelevanceJudgments

DEFAULT_METRICS = ("opa", "ndcg@10")


def dcg(grades: Sequence[float], k: int) -> float:
    grades = np.asarray(grades, dtype=float)[:k]
    discounts = np.log2(np.arange(2, len(grades) + 2))
    return float(np.sum((2.0 ** grades - 1.0) / discounts))


def ndcg_at_k(ranking: Sequence[str], qrels: Mapping[str, int] | Sequence[float], k: int = 10) -> float | None:
    """NDCG@k with gain ``2^g - 1`` and ``log2(rank + 1)`` discount.

    ``qrels`` maps doc id to grade; a plain sequence is taken as the grades in
    ranked order.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    grades = _grades_in_order(ranking, qrels)
    ideal = dcg(sorted(grades, reverse=True), k)
    if ideal == 0:
        return None
    return dcg(grades, k) / ideal


def opa(scores: Sequence[float], grades: Sequence[float]) -> float | None:
    """Ordered pair accuracy over pairs with distinct grades.

    A pair earns 1 when the higher graded document scores strictly higher,
    0.5 on a score tie and 0 otherwise.
    """
    s = np.asarray(scores, dtype=float)
    g = np.asarray(grades, dtype=float)
    if s.shape != g.shape:
        raise ValueError("need one score per grade")
    dg = np.sign(g[:, None] - g[None, :])
    ds = np.sign(s[:, None] - s[None, :])
    upper = np.triu(np.ones_like(dg, dtype=bool), k=1) & (dg != 0)
    valid = int(upper.sum())
    if valid == 0:
        return None
    credit = np.where(ds == dg, 1.0, np.where(ds == 0, 0.5, 0.0))
    return float(credit[upper].sum() / valid)


def mrr(ranking: Sequence[str], qrels: Mapping[str, int] | Sequence[float], rel_threshold: int = 1) -> float | None:
    """Reciprocal rank of the first document graded at least ``rel_threshold``."""
    if rel_threshold < 1:
        raise ValueError("rel_threshold must be >= 1")
    for pos, grade in enumerate(_grades_in_order(ranking, qrels), start=1):
        if grade >= rel_threshold:
            return 1.0 / pos
    return None


def _grades_in_order(ranking, qrels) -> list[float]:
    if isinstance(qrels, Mapping):
        return [float(qrels.get(d, 0)) for d in ranking]
    return [float(g) for g in qrels]


def _parse_metric(name: str) -> tuple[str, int]:
    base, _, arg = name.partition("@")
    if base not in ("opa", "ndcg", "mrr"):
        raise ValueError(f"unknown metric {name!r}")
    if base == "ndcg":
        return base, int(arg) if arg else 10
    if base == "mrr":
        return base, int(arg) if arg else 1
    if arg:
        raise ValueError("opa takes no cutoff")
    return base, 0


@dataclass
class MetricReport:
    per_query: dict[str, dict[str, float | None]] = field(default_factory=dict)
    metrics: tuple[str, ...] = DEFAULT_METRICS

    @property
    def means(self) -> dict[str, float | None]:
        out = {}
        for m in self.metrics:
            values = [self.per_query[q][m] for q in sorted(self.per_query) if self.per_query[q][m] is not None]
            out[m] = math.fsum(values) / len(values) if values else None
        return out

    @property
    def excluded(self) -> dict[str, int]:
        return {m: sum(1 for v in self.per_query.values() if v[m] is None) for m in self.metrics}

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["qid", "metric", "value"])
        for q in sorted(self.per_query):
            for m in self.metrics:
                writer.writerow([q, m, _fmt(self.per_query[q][m])])
        means, excluded = self.means, self.excluded
        for m in self.metrics:
            writer.writerow(["__mean__", m, _fmt(means[m])])
        for m in self.metrics:
            writer.writerow(["__excluded__", m, excluded[m]])
        return buf.getvalue()


def _fmt(value: float | None) -> str:
    return "undefined" if value is None else repr(float(value))


def evaluate_run(
    rankings: Mapping[str, Sequence[tuple[str, float]]],
    qrels: RelevanceJudgments | Mapping[tuple[str, str], int],
    metrics: Iterable[str] = DEFAULT_METRICS,
) -> MetricReport:
    """Score a run given as ``{qid: [(doc, score), ...]}`` in ranked order."""
    if not rankings:
        raise ValueError("cannot evaluate an empty run")
    metrics = tuple(metrics)
    parsed = [_parse_metric(m) for m in metrics]
    report = MetricReport(metrics=metrics)
    for q in sorted(rankings):
        docs = [d for d, _ in rankings[q]]
        scores = [s for _, s in rankings[q]]
        grades = [qrels.get((q, d), 0) for d in docs]
        row = {}
        for name, (base, arg) in zip(metrics, parsed):
            if base == "opa":
                row[name] = opa(scores, grades)
            elif base == "ndcg":
                row[name] = ndcg_at_k(docs, grades, arg)
            else:
                row[name] = mrr(docs, grades, arg)
        report.per_query[q] = row
    return report


SWEEP_COLUMNS = ("strategy", "budget_fraction", "seed", "teacher_calls", "wall_clock_seconds", "opa", "ndcg10")


def sweep_report(results: Mapping[tuple[str, str, int], Mapping[str, float]]) -> str:
    """CSV of sweep cells keyed by ``(strategy, budget, seed)`` plus median rows.

    Budgets are written exactly as given; median rows carry ``median`` in the
    seed column.
    """
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(SWEEP_COLUMNS)
    groups: dict[tuple[str, str], list[Mapping[str, float]]] = {}
    for (strategy, budget, seed), r in sorted(results.items(), key=lambda kv: (kv[0][0], _budget_key(kv[0][1]), kv[0][2])):
        writer.writerow([strategy, budget, seed, r["teacher_calls"], _num(r["wall_clock_seconds"]), _num(r["opa"]), _num(r["ndcg10"])])
        groups.setdefault((strategy, budget), []).append(r)
    for (strategy, budget), rows in groups.items():
        med = {c: _median([r[c] for r in rows]) for c in ("teacher_calls", "wall_clock_seconds", "opa", "ndcg10")}
        calls = med["teacher_calls"]
        calls = int(calls) if calls == int(calls) else calls
        writer.writerow([strategy, budget, "median", calls, _num(med["wall_clock_seconds"]), _num(med["opa"]), _num(med["ndcg10"])])
    return buf.getvalue()


def _median(values):
    values = [v for v in values if v is not None]
    return statistics.median(values) if values else None


def _num(value) -> str:
    return "undefined" if value is None else repr(float(value))


def _budget_key(budget: str):
    try:
        return (0, Fraction(str(budget).rstrip("%")))
    except ValueError:
        return (1, str(budget))
