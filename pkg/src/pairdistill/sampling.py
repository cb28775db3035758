"""Budgeted weighted sampling of ordered document pairs.

Pairs are drawn by successive sampling: each draw picks a remaining pair with
probability proportional to its weight. This is realized with exponential
race keys (``Exp(1) / w``, smallest first), which has the same distribution.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from decimal import ROUND_HALF_UP, Decimal
from typing import Iterable, Sequence

import numpy as np

from .corpus import CandidateSet

STRATEGIES = ("random", "rr", "rrsum", "rrdiff")


@dataclass(frozen=True)
class Budget:
    """Either a fraction of the ordered-pair universe or an absolute count."""

    fraction: float | None = None
    count: int | None = None

    def __post_init__(self):
        if (self.fraction is None) == (self.count is None):
            raise ValueError("budget needs exactly one of fraction or count")
        if self.fraction is not None and not 0.0 < self.fraction <= 1.0:
            raise ValueError(f"budget fraction must be in (0, 1], got {self.fraction}")
        if self.count is not None and self.count < 1:
            raise ValueError(f"budget count must be >= 1, got {self.count}")

    @classmethod
    def parse(cls, text: str | float | int) -> "Budget":
        """``"0.02"`` or ``0.02`` is a fraction, ``"#50"`` or ``50`` an absolute count."""
        if isinstance(text, int) and not isinstance(text, bool):
            return cls(count=text)
        if isinstance(text, float):
            return cls(fraction=text)
        text = str(text).strip()
        if text.startswith("#"):
            return cls(count=int(text[1:]))
        if text.endswith("%"):
            return cls(fraction=float(text[:-1]) / 100)
        return cls(fraction=float(text))

    def __str__(self) -> str:
        return f"#{self.count}" if self.count is not None else repr(self.fraction)


@dataclass(frozen=True)
class SampledPairSet:
    """Ordered pairs drawn for one query, in draw order.

    ``pairs`` holds 0-based indices into the candidate set.
    """

    query: str
    pairs: tuple[tuple[int, int], ...]
    docs: tuple[str, ...]

    def __len__(self) -> int:
        return len(self.pairs)

    def doc_pairs(self) -> list[tuple[str, str]]:
        return [(self.docs[a], self.docs[b]) for a, b in self.pairs]


def pair_universe(n: int) -> np.ndarray:
    """All ``n * (n - 1)`` ordered pairs ``(a, b)``, ``a != b``, lexicographic."""
    if n < 2:
        raise ValueError(f"need at least 2 candidates to form a pair, got {n}")
    a, b = np.divmod(np.arange(n * n), n)
    keep = a != b
    return np.column_stack([a[keep], b[keep]])


def _check_ranks(ranks) -> np.ndarray:
    ranks = np.asarray(ranks)
    if not np.array_equal(np.sort(ranks), np.arange(1, len(ranks) + 1)):
        raise ValueError("ranks must be a permutation of 1..n")
    return ranks.astype(float)


def strategy_weights(strategy: str, ranks, pairs: np.ndarray | None = None) -> np.ndarray:
    """Unnormalized weight of every ordered pair under ``strategy``.

    ``ranks[i]`` is the 1-based initial rank of candidate ``i``; ``pairs``
    defaults to :func:`pair_universe` over the candidates.
    """
    if strategy not in STRATEGIES:
        raise ValueError(f"unknown strategy {strategy!r}; expected one of {STRATEGIES}")
    ranks = _check_ranks(ranks)
    if pairs is None:
        pairs = pair_universe(len(ranks))
    rr_a = 1.0 / ranks[pairs[:, 0]]
    rr_b = 1.0 / ranks[pairs[:, 1]]
    if strategy == "random":
        return np.ones(len(pairs))
    if strategy == "rr":
        return rr_a
    if strategy == "rrsum":
        return (rr_a + rr_b) / 2
    return np.abs(rr_a - rr_b)


def successive_sample(weights, k: int, seed=None, size: int | None = None) -> np.ndarray:
    """Draw ``k`` distinct indices proportionally to ``weights`` without replacement.

    Returns indices in draw order, shape ``(k,)``, or ``(size, k)`` for
    ``size`` independent repetitions. Zero-weight items come only after all
    positive ones, in uniformly random order.
    """
    w = np.asarray(weights, dtype=float)
    if w.ndim != 1:
        raise ValueError("weights must be one-dimensional")
    if np.any(w < 0) or not np.all(np.isfinite(w)):
        raise ValueError("weights must be finite and non-negative")
    if not np.any(w > 0):
        raise ValueError("at least one weight must be positive")
    if not 1 <= k <= len(w):
        raise ValueError(f"cannot draw {k} items from {len(w)}")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    reps = 1 if size is None else size
    shape = (reps, len(w))
    race = rng.exponential(size=shape)
    tiebreak = rng.random(size=shape)
    positive = w > 0
    # log-space keys keep tiny weights finite and ahead of zero-weight items
    with np.errstate(divide="ignore"):
        keys = np.where(positive, np.log(race) - np.log(np.where(positive, w, 1.0)), np.inf)
    order = np.lexsort((tiebreak, keys), axis=-1)[:, :k]
    return order[0] if size is None else order


def sample_without_replacement(pairs, weights, k: int, seed=None) -> list:
    """Draw ``k`` of ``pairs`` by successive sampling; returned in draw order."""
    if not isinstance(pairs, np.ndarray):
        pairs = list(pairs)
    if len(pairs) != len(weights):
        raise ValueError("pairs and weights differ in length")
    idx = successive_sample(weights, k, seed)
    if isinstance(pairs, np.ndarray):
        return [tuple(int(v) for v in pairs[i]) for i in idx]
    return [pairs[i] for i in idx]


def resolve_budget(budget: Budget, n: int) -> int:
    """Number of ordered pairs a budget buys among ``n`` candidates."""
    if n < 2:
        raise ValueError("need at least 2 candidates")
    universe = n * (n - 1)
    if budget.count is not None:
        return min(budget.count, universe)
    # Decimal keeps half-away-from-zero rounding exact on the decimal fraction
    k = int((Decimal(repr(budget.fraction)) * universe).to_integral_value(ROUND_HALF_UP))
    return min(max(1, k), universe)


def derive_seed(global_seed: int, *parts: str) -> int:
    """Stable 63-bit seed from a global seed and string parts (e.g. a query id)."""
    text = "\x1f".join([str(global_seed), *parts])
    return int.from_bytes(hashlib.sha256(text.encode()).digest()[:8], "little") >> 1


def sample_pairs_for_query(candidate_set: CandidateSet, strategy: str, budget: Budget, seed: int) -> SampledPairSet:
    n = len(candidate_set)
    pairs = pair_universe(n)
    weights = strategy_weights(strategy, candidate_set.ranks, pairs)
    k = resolve_budget(budget, n)
    idx = successive_sample(weights, k, derive_seed(seed, candidate_set.query))
    chosen = tuple((int(a), int(b)) for a, b in pairs[idx])
    return SampledPairSet(candidate_set.query, chosen, tuple(candidate_set.docs))


def write_pairs(sampled: Iterable[SampledPairSet]) -> str:
    lines = []
    for s in sorted(sampled, key=lambda s: s.query):
        lines.extend(f"{s.query}\t{a}\t{b}\n" for a, b in s.doc_pairs())
    return "".join(lines)


def parse_pairs(text: str, candidates: dict[str, CandidateSet] | None = None) -> dict[str, list[tuple[str, str]]]:
    """Read ``qid<TAB>doc_a<TAB>doc_b`` lines, preserving per-query order."""
    out: dict[str, list[tuple[str, str]]] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        fields = line.split("\t")
        if len(fields) != 3:
            raise ValueError(f"line {lineno}: expected 3 tab-separated fields")
        q, a, b = fields
        if a == b:
            raise ValueError(f"line {lineno}: pair compares {a} with itself")
        if candidates is not None:
            docs = set(candidates[q].docs) if q in candidates else set()
            if a not in docs or b not in docs:
                raise ValueError(f"line {lineno}: pair ({a}, {b}) not in candidate set of {q}")
        out.setdefault(q, []).append((a, b))
    return out


def pairs_to_indices(candidate_set: CandidateSet, doc_pairs: Sequence[tuple[str, str]]) -> np.ndarray:
    pos = {d: i for i, d in enumerate(candidate_set.docs)}
    return np.array([(pos[a], pos[b]) for a, b in doc_pairs], dtype=int).reshape(-1, 2)
