"""Data model, TREC-style file formats, query splits and a synthetic dataset.

Documents are opaque ids with a feature vector; no text is processed.
"""

from __future__ import annotations

import io
import math
import random
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence, TextIO

import numpy as np


class FormatError(ValueError):
    """A malformed line in one of the whitespace-delimited input files."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


def _check_id(value: str, what: str) -> str:
    if not value or any(ch.isspace() for ch in value):
        raise ValueError(f"invalid {what} {value!r}: must be non-empty without whitespace")
    return value


@dataclass(frozen=True)
class CandidateSet:
    """A query with its first-stage ranking.

    Entries are kept sorted by initial score descending, ties by doc id, so
    the 1-based position of a document is its initial rank.
    """

    query: str
    entries: tuple[tuple[str, float], ...]

    def __post_init__(self):
        _check_id(self.query, "query id")
        if not self.entries:
            raise ValueError(f"candidate set for {self.query} is empty")
        entries = tuple((_check_id(str(d), "doc id"), float(s)) for d, s in self.entries)
        docs = [d for d, _ in entries]
        if len(set(docs)) != len(docs):
            dup = sorted({d for d in docs if docs.count(d) > 1})
            raise ValueError(f"duplicate doc ids in {self.query}: {dup}")
        object.__setattr__(self, "entries", tuple(sorted(entries, key=lambda e: (-e[1], e[0]))))

    @classmethod
    def from_scores(cls, query: str, scores: Mapping[str, float] | Iterable[tuple[str, float]]):
        items = scores.items() if isinstance(scores, Mapping) else scores
        return cls(query, tuple(items))

    def __len__(self) -> int:
        return len(self.entries)

    @property
    def docs(self) -> list[str]:
        return [d for d, _ in self.entries]

    @property
    def scores(self) -> np.ndarray:
        return np.array([s for _, s in self.entries], dtype=float)

    @property
    def ranks(self) -> np.ndarray:
        return np.arange(1, len(self.entries) + 1)

    def index(self, doc: str) -> int:
        return self.docs.index(doc)


class RelevanceJudgments(dict):
    """Graded judgments keyed by ``(qid, docid)``; missing pairs read as 0."""

    def __setitem__(self, key, grade):
        if isinstance(grade, bool) or int(grade) != grade:
            raise ValueError(f"grade for {key} must be an integer, got {grade!r}")
        if grade < 0:
            raise ValueError(f"negative grade {grade} for {key}")
        super().__setitem__(key, int(grade))

    def grade(self, query: str, doc: str) -> int:
        return self.get((query, doc), 0)

    def grades(self, query: str, docs: Sequence[str]) -> np.ndarray:
        return np.array([self.get((query, d), 0) for d in docs], dtype=float)

    def max_grade(self) -> int:
        return max(self.values(), default=0)

    def queries(self) -> list[str]:
        return sorted({q for q, _ in self})


class FeatureStore:
    """Feature vectors keyed by ``(qid, docid)``, all of length ``dim``."""

    def __init__(self, dim: int, vectors: Mapping[tuple[str, str], Sequence[float]] | None = None):
        if dim < 1:
            raise ValueError("feature dim must be positive")
        self.dim = dim
        self._vectors: dict[tuple[str, str], np.ndarray] = {}
        for key, vec in (vectors or {}).items():
            self[key] = vec

    def __setitem__(self, key: tuple[str, str], vec: Sequence[float]):
        arr = np.array(vec, dtype=float)
        if arr.shape != (self.dim,):
            raise ValueError(f"feature vector for {key} has shape {arr.shape}, expected ({self.dim},)")
        arr.setflags(write=False)
        self._vectors[key] = arr

    def __getitem__(self, key: tuple[str, str]) -> np.ndarray:
        return self._vectors[key]

    def __contains__(self, key) -> bool:
        return key in self._vectors

    def __len__(self) -> int:
        return len(self._vectors)

    def __iter__(self):
        return iter(self._vectors)

    def matrix(self, query: str, docs: Sequence[str]) -> np.ndarray:
        """Stack the vectors of ``docs`` into an ``(len(docs), dim)`` array."""
        missing = [d for d in docs if (query, d) not in self._vectors]
        if missing:
            raise KeyError(f"missing features for query {query}: {missing[:5]}")
        if not docs:
            return np.empty((0, self.dim))
        return np.stack([self._vectors[(query, d)] for d in docs])


@dataclass(frozen=True)
class DatasetSplit:
    train: frozenset
    validation: frozenset
    test: frozenset

    def __post_init__(self):
        for name in ("train", "validation", "test"):
            object.__setattr__(self, name, frozenset(getattr(self, name)))
        if self.train & self.validation or self.train & self.test or self.validation & self.test:
            raise ValueError("split parts must be disjoint")

    def sizes(self) -> tuple[int, int, int]:
        return len(self.train), len(self.validation), len(self.test)


@dataclass(frozen=True)
class SyntheticSpec:
    num_queries: int = 200
    docs_per_query: int = 100
    feature_dim: int = 10
    label_noise_sd: float = 0.5
    initial_ranking_noise_sd: float = 1.5
    num_grades: int = 4

    def __post_init__(self):
        if min(self.num_queries, self.docs_per_query, self.feature_dim) < 1:
            raise ValueError("num_queries, docs_per_query and feature_dim must be >= 1")
        if self.label_noise_sd < 0 or self.initial_ranking_noise_sd < 0:
            raise ValueError("noise standard deviations must be >= 0")
        if self.num_grades < 2:
            raise ValueError("num_grades must be >= 2")
        if self.docs_per_query < self.num_grades:
            raise ValueError(
                f"docs_per_query ({self.docs_per_query}) < num_grades ({self.num_grades}): "
                "some grade buckets would be empty"
            )


@dataclass
class Dataset:
    """Candidate sets, judgments and features for one collection."""

    candidates: dict[str, CandidateSet]
    qrels: RelevanceJudgments
    features: FeatureStore
    meta: dict = field(default_factory=dict)

    @property
    def queries(self) -> list[str]:
        return sorted(self.candidates)


# -- qrels -------------------------------------------------------------------


def _as_stream(text_stream: TextIO | str) -> TextIO:
    return io.StringIO(text_stream) if isinstance(text_stream, str) else text_stream


def parse_qrels(text_stream: TextIO | str) -> RelevanceJudgments:
    qrels = RelevanceJudgments()
    for lineno, line in enumerate(_as_stream(text_stream), start=1):
        fields = line.split()
        if not fields:
            continue
        if len(fields) != 4:
            raise FormatError(f"expected 4 fields, got {len(fields)}", lineno)
        qid, _, docid, grade = fields
        try:
            value = int(grade)
        except ValueError:
            raise FormatError(f"grade {grade!r} is not an integer", lineno) from None
        if value < 0:
            raise ValueError(f"line {lineno}: negative grade {value}")
        qrels[(qid, docid)] = value
    return qrels


def write_qrels(qrels: Mapping[tuple[str, str], int]) -> str:
    return "".join(f"{q} 0 {d} {g}\n" for (q, d), g in sorted(qrels.items()))


# -- runs --------------------------------------------------------------------


def parse_trec_run(text_stream: TextIO | str) -> list[CandidateSet]:
    """Read a six-column run file into one candidate set per query.

    Entries are re-sorted by score; the file's rank column is ignored.
    """
    by_query: dict[str, dict[str, float]] = {}
    for lineno, line in enumerate(_as_stream(text_stream), start=1):
        fields = line.split()
        if not fields:
            continue
        if len(fields) != 6:
            raise FormatError(f"expected 6 fields, got {len(fields)}", lineno)
        qid, _, docid, _, score, _ = fields
        try:
            value = float(score)
        except ValueError:
            raise FormatError(f"score {score!r} is not numeric", lineno) from None
        if not math.isfinite(value):
            raise FormatError(f"score {score!r} is not finite", lineno)
        docs = by_query.setdefault(qid, {})
        if docid in docs:
            raise FormatError(f"duplicate doc {docid} for query {qid}", lineno)
        docs[docid] = value
    return [CandidateSet.from_scores(q, docs) for q, docs in sorted(by_query.items())]


def write_trec_run(rankings: Iterable[CandidateSet], tag: str = "pairdistill") -> str:
    _check_id(tag, "run tag")
    lines = []
    for cs in sorted(rankings, key=lambda c: c.query):
        for rank, (doc, score) in enumerate(cs.entries, start=1):
            lines.append(f"{cs.query} Q0 {doc} {rank} {score:.6f} {tag}\n")
    return "".join(lines)


# -- features ----------------------------------------------------------------


def parse_features(text_stream: TextIO | str) -> FeatureStore:
    stream = _as_stream(text_stream)
    header = stream.readline()
    if not header.startswith("#dim="):
        raise FormatError("missing '#dim=<d>' header", 1)
    try:
        dim = int(header.strip()[5:])
    except ValueError:
        raise FormatError(f"bad header {header.strip()!r}", 1) from None
    store = FeatureStore(dim)
    for lineno, line in enumerate(stream, start=2):
        line = line.rstrip("\n")
        if not line.strip():
            continue
        fields = line.split("\t")
        if len(fields) != dim + 2:
            raise FormatError(f"expected {dim + 2} tab-separated fields, got {len(fields)}", lineno)
        try:
            vec = [float(x) for x in fields[2:]]
        except ValueError:
            raise FormatError("non-numeric feature value", lineno) from None
        store[(fields[0], fields[1])] = vec
    return store


def write_features(store: FeatureStore) -> str:
    lines = [f"#dim={store.dim}\n"]
    for q, d in sorted(store):
        values = "\t".join(repr(float(v)) for v in store[(q, d)])
        lines.append(f"{q}\t{d}\t{values}\n")
    return "".join(lines)


# -- splits ------------------------------------------------------------------


def make_split(query_ids: Iterable[str], ratios=(0.7, 0.1, 0.2), seed: int = 0) -> DatasetSplit:
    """Seeded, unstratified query split.

    Validation and test sizes are ``floor(ratio * n)``; the remainder goes to
    train.
    """
    ratios = tuple(float(r) for r in ratios)
    if len(ratios) != 3 or any(r < 0 for r in ratios) or abs(sum(ratios) - 1.0) > 1e-9:
        raise ValueError(f"ratios must be 3 non-negative numbers summing to 1, got {ratios}")
    queries = sorted(set(query_ids))
    n = len(queries)
    if n < sum(1 for r in ratios if r > 0):
        raise ValueError(f"{n} queries cannot fill {sum(1 for r in ratios if r > 0)} non-empty buckets")

    n_val = math.floor(ratios[1] * n + 1e-9)
    n_test = math.floor(ratios[2] * n + 1e-9)
    # floor can leave a non-zero bucket empty on tiny inputs
    if ratios[1] > 0 and n_val == 0:
        n_val = 1
    if ratios[2] > 0 and n_test == 0:
        n_test = 1
    n_train = n - n_val - n_test
    if ratios[0] > 0 and n_train == 0:
        if n_test > 1:
            n_test -= 1
        else:
            n_val -= 1
        n_train = 1

    rng = random.Random(seed)
    shuffled = list(queries)
    rng.shuffle(shuffled)
    return DatasetSplit(
        train=shuffled[:n_train],
        validation=shuffled[n_train : n_train + n_val],
        test=shuffled[n_train + n_val :],
    )


# -- synthetic data ----------------------------------------------------------


def generate_synthetic(spec: SyntheticSpec, seed: int = 0) -> Dataset:
    """Draw a linear-latent-relevance collection.

    Per query, latent relevance ``u = w*.x + noise`` is bucketed into
    ``num_grades`` equal-mass grades, and the first-stage score is ``u`` plus
    more noise. Initial scores are rounded to the 6 decimals of the run format
    so files round-trip exactly.
    """
    rng = np.random.default_rng(seed)
    n, d, g = spec.docs_per_query, spec.feature_dim, spec.num_grades
    w_star = rng.standard_normal(d)
    w_star /= np.linalg.norm(w_star)

    width = max(3, len(str(spec.num_queries - 1)))
    dwidth = max(3, len(str(n - 1)))
    # each document's rank in its query's u-order maps to an equal-mass bucket
    bucket_of_rank = (np.arange(n) * g) // n

    candidates: dict[str, CandidateSet] = {}
    qrels = RelevanceJudgments()
    features = FeatureStore(d)
    for qi in range(spec.num_queries):
        qid = f"q{qi:0{width}d}"
        docs = [f"d{di:0{dwidth}d}" for di in range(n)]
        x = rng.standard_normal((n, d))
        u = x @ w_star + spec.label_noise_sd * rng.standard_normal(n)
        initial = np.round(u + spec.initial_ranking_noise_sd * rng.standard_normal(n), 6)
        grades = np.empty(n, dtype=int)
        grades[np.argsort(u, kind="stable")] = bucket_of_rank
        for di, doc in enumerate(docs):
            features[(qid, doc)] = x[di]
            qrels[(qid, doc)] = int(grades[di])
        candidates[qid] = CandidateSet.from_scores(qid, zip(docs, initial.tolist()))
    meta = {"seed": seed, "spec": spec, "w_star": w_star}
    return Dataset(candidates, qrels, features, meta)
