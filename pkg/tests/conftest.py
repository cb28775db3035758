from fractions import Fraction

import pytest

from pairdistill.corpus import SyntheticSpec, generate_synthetic, make_split


def successive_inclusion(weights, k):
    """Exact inclusion probability of each item under successive sampling.

    Enumerates every ordered draw sequence with exact fractions; zero-weight
    items are drawn uniformly once the positive mass is exhausted.
    """
    n = len(weights)
    weights = [Fraction(w) for w in weights]
    incl = [Fraction(0)] * n

    def walk(remaining, prob, depth):
        if depth == k:
            return
        total = sum(weights[i] for i in remaining)
        for i in remaining:
            if total > 0:
                p = weights[i] / total
            else:
                p = Fraction(1, len(remaining))
            if p == 0:
                continue
            incl[i] += prob * p
            walk([j for j in remaining if j != i], prob * p, depth + 1)

    walk(list(range(n)), Fraction(1), 0)
    return incl


@pytest.fixture(scope="session")
def small_dataset():
    spec = SyntheticSpec(num_queries=20, docs_per_query=12, feature_dim=4, label_noise_sd=0.3, initial_ranking_noise_sd=1.0)
    return generate_synthetic(spec, seed=3)


@pytest.fixture(scope="session")
def small_split(small_dataset):
    return make_split(small_dataset.queries, (0.7, 0.1, 0.2), seed=3)


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
