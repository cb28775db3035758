"""Teachers that judge documents pointwise or pairwise, plus a judgment cache.

All teachers share two calls: ``pointwise_score(query, doc)`` in [0, 1] and
``pairwise_preference(query, first, second)``, the probability that ``first``
is preferred when it is listed first. Simulated teachers read ground-truth
grades; the replay teacher reads a judgment file; the remote teacher talks to
a scoring service over HTTP.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
import os
import threading
import time
import urllib.error
import urllib.request
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .corpus import RelevanceJudgments

logger = logging.getLogger(__name__)

DEFAULT_TIE_THRESHOLD = 0.05

POINTWISE_PROMPT = "Does the passage {document} answer the query {query}? Output Yes or No:"
PAIRWISE_PROMPT = (
    "Which of the following two passages is more relevant to the query {query}? "
    "Passage A: {document_a}; Passage B: {document_b}; Output Passage A or Passage B:"
)

KINDS = ("oracle", "bradley_terry", "pointwise_noisy", "replay", "remote")


class TeacherError(RuntimeError):
    pass


class ReplayMiss(TeacherError, KeyError):
    pass


class RemoteTeacherError(TeacherError):
    """Base class for retryable failures talking to the scoring service."""


class RemoteTimeout(RemoteTeacherError):
    pass


class RemoteStatusError(RemoteTeacherError):
    def __init__(self, status: int, body: str = ""):
        self.status = status
        super().__init__(f"scoring service returned HTTP {status}: {body[:200]}")


class RemoteSchemaError(RemoteTeacherError):
    pass


# -- score normalization -------------------------------------------------------


def logistic(z):
    """Overflow-safe logistic function for scalars and arrays."""
    z = np.asarray(z, dtype=float)
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out if out.ndim else float(out)


def normalize_two_way(likelihood_a: float, likelihood_b: float) -> float:
    """Share of the first option in a pair of (unnormalized) likelihoods."""
    total = likelihood_a + likelihood_b
    if likelihood_a < 0 or likelihood_b < 0 or total <= 0:
        raise ValueError(f"likelihoods must be non-negative with a positive sum: {likelihood_a}, {likelihood_b}")
    return likelihood_a / total


def relevance_score(p_yes: float, p_no: float) -> float:
    """Normalized yes/no relevance score of a pointwise prompt."""
    return normalize_two_way(p_yes, p_no)


def preference_from_logliks(loglik_a: float, loglik_b: float) -> float:
    """Two-way softmax over log-likelihoods of "Passage A" and "Passage B"."""
    if not (math.isfinite(loglik_a) and math.isfinite(loglik_b)):
        raise ValueError("log-likelihoods must be finite")
    return float(logistic(loglik_a - loglik_b))


def discretize(p: float, tau: float = DEFAULT_TIE_THRESHOLD) -> float:
    """Map a preference probability to 1, 0 or the 0.5 tie value."""
    if not 0.0 <= tau < 0.5:
        raise ValueError(f"tie threshold must be in [0, 0.5), got {tau}")
    if p > 0.5 + tau:
        return 1.0
    if p < 0.5 - tau:
        return 0.0
    return 0.5


def discretize_array(p: np.ndarray, tau: float = DEFAULT_TIE_THRESHOLD) -> np.ndarray:
    p = np.asarray(p, dtype=float)
    return np.where(p > 0.5 + tau, 1.0, np.where(p < 0.5 - tau, 0.0, 0.5))


# -- records and config ------------------------------------------------------


@dataclass(frozen=True)
class PairJudgment:
    query: str
    first: str
    second: str
    p: float
    c: float

    def __post_init__(self):
        if self.first == self.second:
            raise ValueError(f"pair judgment needs two different docs, got {self.first} twice")
        if not 0.0 <= self.p <= 1.0:
            raise ValueError(f"p={self.p} outside [0, 1]")
        if self.c not in (0.0, 0.5, 1.0):
            raise ValueError(f"c={self.c} is not 0, 0.5 or 1")


@dataclass(frozen=True)
class TeacherSpec:
    kind: str = "bradley_terry"
    beta: float = 2.0
    order_bias: float = 0.0
    pointwise_noise_sd: float = 0.25
    tie_threshold: float = DEFAULT_TIE_THRESHOLD
    seed: int = 0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown teacher kind {self.kind!r}; expected one of {KINDS}")
        if self.beta < 0:
            raise ValueError("beta must be >= 0")
        if self.pointwise_noise_sd < 0:
            raise ValueError("pointwise_noise_sd must be >= 0")
        if not 0.0 <= self.tie_threshold < 0.5:
            raise ValueError("tie_threshold must be in [0, 0.5)")


def _derived_normal(seed: int, *parts: str) -> float:
    digest = hashlib.sha256("\x1f".join([str(seed), *parts]).encode()).digest()
    return float(np.random.default_rng(int.from_bytes(digest[:8], "little")).standard_normal())


# -- teachers ------------------------------------------------------------------


class Teacher:
    """Common interface. ``calls`` counts individual teacher invocations."""

    batched = False

    def __init__(self, spec: TeacherSpec):
        self.spec = spec
        self.calls = 0
        self._lock = threading.Lock()

    def _count(self, n: int = 1):
        with self._lock:
            self.calls += n

    def pointwise_score(self, query: str, doc: str) -> float:
        self._count()
        return self._pointwise(query, doc)

    def pairwise_preference(self, query: str, first: str, second: str) -> float:
        if first == second:
            raise ValueError(f"cannot compare {first} with itself")
        self._count()
        return self._pairwise(query, first, second)

    def pairwise_preferences(self, query: str, firsts: Sequence[str], seconds: Sequence[str]) -> np.ndarray:
        """Batch version of :meth:`pairwise_preference`; counts one call per pair."""
        if any(a == b for a, b in zip(firsts, seconds)):
            raise ValueError("cannot compare a document with itself")
        self._count(len(firsts))
        return self._pairwise_batch(query, firsts, seconds)

    def _pointwise(self, query: str, doc: str) -> float:
        raise NotImplementedError(f"{type(self).__name__} has no pointwise mode")

    def _pairwise(self, query: str, first: str, second: str) -> float:
        raise NotImplementedError

    def _pairwise_batch(self, query, firsts, seconds) -> np.ndarray:
        return np.array([self._pairwise(query, a, b) for a, b in zip(firsts, seconds)], dtype=float)


class SimulatedTeacher(Teacher):
    """Teacher driven by ground-truth grades (kinds oracle, bradley_terry, pointwise_noisy).

    Pairwise preferences follow ``logistic(beta * (y_i - y_j) + order_bias)``
    (a hard step for the oracle). The pointwise_noisy kind adds seeded
    Gaussian noise to ``grade / max_grade`` and clamps to [0, 1].
    """

    def __init__(self, spec: TeacherSpec, qrels: RelevanceJudgments, max_grade: int | None = None):
        if spec.kind not in ("oracle", "bradley_terry", "pointwise_noisy"):
            raise ValueError(f"{spec.kind!r} is not a simulated teacher kind")
        super().__init__(spec)
        self.batched = True
        self.qrels = qrels
        self.max_grade = qrels.max_grade() if max_grade is None else max_grade
        if spec.kind == "pointwise_noisy" and self.max_grade <= 0:
            raise ValueError("pointwise teacher needs a positive maximum grade")

    def _pointwise(self, query, doc):
        base = self.qrels.grade(query, doc) / self.max_grade if self.max_grade > 0 else 0.0
        if self.spec.kind == "pointwise_noisy" and self.spec.pointwise_noise_sd > 0:
            base += self.spec.pointwise_noise_sd * _derived_normal(self.spec.seed, query, doc)
        return min(1.0, max(0.0, base))

    def _pairwise(self, query, first, second):
        return float(self._pairwise_batch(query, [first], [second])[0])

    def _pairwise_batch(self, query, firsts, seconds):
        gi = self.qrels.grades(query, firsts)
        gj = self.qrels.grades(query, seconds)
        if self.spec.kind == "oracle":
            return np.sign(gi - gj) * 0.5 + 0.5
        return logistic(self.spec.beta * (gi - gj) + self.spec.order_bias)


class ReplayTeacher(Teacher):
    """Answers from previously recorded judgments; unknown keys raise :class:`ReplayMiss`."""

    def __init__(self, spec: TeacherSpec, store: "JudgmentStore", pointwise: Mapping[tuple[str, str], float] | None = None):
        super().__init__(spec)
        self.store = store
        self.pointwise = dict(pointwise or {})

    def _pointwise(self, query, doc):
        try:
            return self.pointwise[(query, doc)]
        except KeyError:
            raise ReplayMiss(f"no recorded pointwise score for ({query}, {doc})") from None

    def _pairwise(self, query, first, second):
        p = self.store.get_p(query, first, second)
        if p is None:
            raise ReplayMiss(f"no recorded judgment for ({query}, {first}, {second})")
        return p


class RemoteTeacher(Teacher):
    """Client for a scoring service that returns option log-likelihoods.

    Pairwise requests post ``{"query", "passage_a", "passage_b"}`` and expect
    ``{"loglik_a", "loglik_b"}``. Pointwise requests post ``{"query",
    "passage"}`` and expect ``{"loglik_yes", "loglik_no"}``. Texts are looked
    up in ``texts`` and fall back to the ids themselves.
    """

    def __init__(
        self,
        spec: TeacherSpec,
        url: str | None = None,
        timeout: float = 30.0,
        max_retries: int = 3,
        backoff: float = 0.5,
        texts: Mapping[str, str] | None = None,
        queries: Mapping[str, str] | None = None,
    ):
        super().__init__(spec)
        self.url = url or os.environ.get("PRD_TEACHER_URL")
        if not self.url:
            raise TeacherError("remote teacher needs a URL (set PRD_TEACHER_URL)")
        self.timeout = timeout
        self.max_retries = max_retries
        self.backoff = backoff
        self.texts = texts or {}
        self.queries = queries or {}

    def _with_retries(self, request: dict, keys: tuple[str, str]) -> tuple[float, float]:
        attempt = 0
        while True:
            try:
                response = remote_judge(request, self.url, self.timeout)
                return _require_pair(response, keys)
            except RemoteTeacherError as exc:
                if attempt >= self.max_retries:
                    raise
                attempt += 1
                logger.warning("remote teacher attempt %d failed: %s", attempt, exc)
                time.sleep(self.backoff * 2 ** (attempt - 1))

    def _pairwise(self, query, first, second):
        request = {
            "query": self.queries.get(query, query),
            "passage_a": self.texts.get(first, first),
            "passage_b": self.texts.get(second, second),
        }
        a, b = self._with_retries(request, ("loglik_a", "loglik_b"))
        return preference_from_logliks(a, b)

    def _pointwise(self, query, doc):
        request = {"query": self.queries.get(query, query), "passage": self.texts.get(doc, doc)}
        yes, no = self._with_retries(request, ("loglik_yes", "loglik_no"))
        return preference_from_logliks(yes, no)


def _require_pair(response, keys: tuple[str, str]) -> tuple[float, float]:
    if not isinstance(response, dict):
        raise RemoteSchemaError(f"expected a JSON object, got {type(response).__name__}")
    values = []
    for key in keys:
        value = response.get(key)
        if isinstance(value, bool) or not isinstance(value, (int, float)) or not math.isfinite(value):
            raise RemoteSchemaError(f"response field {key!r} missing or not a finite number: {value!r}")
        values.append(float(value))
    return values[0], values[1]


def remote_judge(request: dict, url: str | None = None, timeout: float = 30.0) -> dict:
    """POST one JSON request to the scoring service and return the decoded body."""
    url = url or os.environ.get("PRD_TEACHER_URL")
    if not url:
        raise TeacherError("PRD_TEACHER_URL is not set")
    body = json.dumps(request).encode()
    http_request = urllib.request.Request(url, data=body, headers={"Content-Type": "application/json"}, method="POST")
    try:
        with urllib.request.urlopen(http_request, timeout=timeout) as resp:
            payload = resp.read()
    except urllib.error.HTTPError as exc:
        raise RemoteStatusError(exc.code, exc.read().decode(errors="replace")) from None
    except (TimeoutError, OSError) as exc:
        reason = getattr(exc, "reason", exc)
        if isinstance(exc, TimeoutError) or isinstance(reason, TimeoutError):
            raise RemoteTimeout(f"scoring service timed out after {timeout}s") from None
        raise RemoteTeacherError(f"transport failure: {reason}") from None
    try:
        return json.loads(payload)
    except json.JSONDecodeError as exc:
        raise RemoteSchemaError(f"response is not JSON: {exc}") from None


def make_teacher(spec: TeacherSpec, qrels: RelevanceJudgments | None = None, store: "JudgmentStore | None" = None, **kwargs) -> Teacher:
    if spec.kind in ("oracle", "bradley_terry", "pointwise_noisy"):
        if qrels is None:
            raise ValueError(f"{spec.kind} teacher needs relevance judgments")
        return SimulatedTeacher(spec, qrels, **kwargs)
    if spec.kind == "replay":
        if store is None:
            raise ValueError("replay teacher needs a judgment store")
        return ReplayTeacher(spec, store, **kwargs)
    return RemoteTeacher(spec, **kwargs)


# -- judgment store --------------------------------------------------------------


class JudgmentStore:
    """Append-only cache of pairwise judgments keyed by ordered ``(query, first, second)``.

    Only ``p`` is held in memory; ``c`` is re-derived with the store's tie
    threshold. ``flush`` rewrites the backing file as JSON lines sorted by key.
    """

    def __init__(self, path: str | os.PathLike | None = None, tie_threshold: float = DEFAULT_TIE_THRESHOLD):
        self.path = Path(path) if path is not None else None
        self.tie_threshold = tie_threshold
        self._data: dict[str, dict[tuple[str, str], float]] = {}
        self._lock = threading.Lock()
        self._dirty = False
        if self.path is not None and self.path.exists():
            self._load()

    def _load(self):
        with open(self.path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, start=1):
                if not line.strip():
                    continue
                try:
                    rec = json.loads(line)
                    q, a, b, p, c = rec["q"], rec["a"], rec["b"], float(rec["p"]), float(rec["c"])
                except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                    raise ValueError(f"{self.path}:{lineno}: bad judgment record ({exc})") from None
                if discretize(p, self.tie_threshold) != c:
                    raise ValueError(f"{self.path}:{lineno}: c={c} inconsistent with p={p} at tau={self.tie_threshold}")
                PairJudgment(q, a, b, p, c)
                self._data.setdefault(q, {})[(a, b)] = p

    def __len__(self) -> int:
        return sum(len(v) for v in self._data.values())

    def __contains__(self, key) -> bool:
        q, a, b = key
        return (a, b) in self._data.get(q, {})

    def get_p(self, query: str, first: str, second: str) -> float | None:
        return self._data.get(query, {}).get((first, second))

    def get(self, query: str, first: str, second: str) -> PairJudgment | None:
        p = self.get_p(query, first, second)
        if p is None:
            return None
        return PairJudgment(query, first, second, p, discretize(p, self.tie_threshold))

    def put(self, query: str, first: str, second: str, p: float):
        """Record a judgment; an existing key is left untouched."""
        if first == second:
            raise ValueError("pair judgment needs two different docs")
        p = float(p)
        if not 0.0 <= p <= 1.0:
            raise ValueError(f"p={p} outside [0, 1]")
        with self._lock:
            bucket = self._data.setdefault(query, {})
            if (first, second) not in bucket:
                bucket[(first, second)] = p
                self._dirty = True

    def put_many(self, query: str, firsts: Sequence[str], seconds: Sequence[str], ps: Iterable[float]):
        with self._lock:
            bucket = self._data.setdefault(query, {})
            for a, b, p in zip(firsts, seconds, ps):
                if (a, b) not in bucket:
                    bucket[(a, b)] = float(p)
                    self._dirty = True

    def lookup(self, query: str, firsts: Sequence[str], seconds: Sequence[str]) -> np.ndarray:
        """Vector of stored ``p`` values; missing keys are NaN."""
        bucket = self._data.get(query, {})
        return np.array([bucket.get((a, b), np.nan) for a, b in zip(firsts, seconds)], dtype=float)

    def judgments(self, query: str | None = None) -> list[PairJudgment]:
        queries = [query] if query is not None else sorted(self._data)
        out = []
        for q in queries:
            for (a, b), p in sorted(self._data.get(q, {}).items()):
                out.append(PairJudgment(q, a, b, p, discretize(p, self.tie_threshold)))
        return out

    def flush(self):
        if self.path is None or not self._dirty and self.path.exists():
            return
        self.path.parent.mkdir(parents=True, exist_ok=True)
        tmp = self.path.with_suffix(self.path.suffix + ".tmp")
        tau = self.tie_threshold
        with self._lock, open(tmp, "w", encoding="utf-8") as fh:
            for q in sorted(self._data):
                for (a, b), p in sorted(self._data[q].items()):
                    c = discretize(p, tau)
                    fh.write(json.dumps({"q": q, "a": a, "b": b, "p": p, "c": c}) + "\n")
            self._dirty = False
        os.replace(tmp, self.path)


def judge_pairs(
    teacher: Teacher,
    query: str,
    sampled_pairs: Iterable[tuple[str, str]],
    store: JudgmentStore,
    both_directions: bool = True,
    return_judgments: bool = True,
) -> list[PairJudgment] | int:
    """Make sure every sampled pair (and its reverse, if asked) is in ``store``.

    Cached keys are never re-queried. Returns the judgments sorted by
    ``(first, second)``, or only the number of new teacher calls when
    ``return_judgments`` is false.
    """
    wanted: dict[tuple[str, str], None] = {}
    for a, b in sampled_pairs:
        if a == b:
            raise ValueError(f"sampled pair ({a}, {b}) compares a doc with itself")
        wanted[(a, b)] = None
        if both_directions:
            wanted[(b, a)] = None
    keys = sorted(wanted)
    missing = [k for k in keys if store.get_p(query, *k) is None]
    if missing:
        if teacher.batched:
            firsts = [a for a, _ in missing]
            seconds = [b for _, b in missing]
            store.put_many(query, firsts, seconds, teacher.pairwise_preferences(query, firsts, seconds))
        else:
            # one at a time so a failure leaves every finished judgment in the store
            for a, b in missing:
                store.put(query, a, b, teacher.pairwise_preference(query, a, b))
    if not return_judgments:
        return len(missing)
    tau = store.tie_threshold
    bucket = store._data.get(query, {})
    return [PairJudgment(query, a, b, bucket[(a, b)], discretize(bucket[(a, b)], tau)) for a, b in keys]
