"""Distill pairwise teacher preferences into a pointwise ranker."""

from .corpus import CandidateSet, Dataset, DatasetSplit, RelevanceJudgments, SyntheticSpec, generate_synthetic, make_split
from .sampling import Budget, sample_pairs_for_query
from .student import DistilledRanker, ModelSpec, TrainConfig
from .teacher import JudgmentStore, TeacherSpec, make_teacher

__version__ = "0.1.0"
