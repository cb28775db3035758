"""Flat ``key = value`` experiment configuration.

Lines starting with ``#`` are comments, as is anything after `` #`` on a
line. Unknown keys are rejected so typos surface early. See ``DEFAULTS`` for every recognized key.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from pathlib import Path

from .corpus import SyntheticSpec
from .sampling import STRATEGIES, Budget
from .student import ModelSpec, TrainConfig
from .teacher import TeacherSpec


class ConfigError(ValueError):
    pass


DEFAULTS: dict[str, str] = {
    "seed": "0",
    "out": "prd-out",
    # dataset
    "data.source": "synthetic",
    "data.run": "",
    "data.qrels": "",
    "data.features": "",
    "synth.num_queries": "200",
    "synth.docs_per_query": "100",
    "synth.feature_dim": "10",
    "synth.label_noise_sd": "0.5",
    "synth.initial_ranking_noise_sd": "1.5",
    "synth.num_grades": "4",
    "split.ratios": "0.7,0.1,0.2",
    # teacher
    "teacher.kind": "bradley_terry",
    "teacher.beta": "2.0",
    "teacher.order_bias": "0.1",
    "teacher.pointwise_noise_sd": "0.25",
    "teacher.tie_threshold": "0.05",
    "teacher.seed": "0",
    "teacher.timeout": "30",
    "teacher.max_retries": "3",
    "teacher.backoff": "0.5",
    # sampling
    "sample.strategy": "random",
    "sample.budget": "0.02",
    "sample.both_directions": "true",
    # student
    "model.kind": "linear",
    "model.hidden_units": "16",
    "train.loss": "pairwise_logistic",
    "train.label_mode": "hard",
    "train.aggregate": "false",
    "train.learning_rate": "",
    "train.epochs": "30",
    "train.batch_size": "512",
    "train.l2": "0.0",
    "train.early_stop_patience": "5",
    # evaluation
    "eval.metrics": "opa,ndcg@10,mrr",
    "eval.run": "",
    # sweep
    "sweep.strategies": "random,rr,rrsum,rrdiff",
    "sweep.budgets": "0.005,0.02,1.0",
    "sweep.seeds": "0,1,2,3,4",
}


def parse_config_text(text: str) -> dict[str, str]:
    values = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ConfigError(f"config line {lineno}: expected key = value")
        key = key.strip()
        if key not in DEFAULTS:
            raise ConfigError(f"config line {lineno}: unknown key {key!r}")
        # "#" only opens a trailing comment after whitespace, so "#50" stays a value
        values[key] = re.sub(r"\s+#.*$", "", value.strip())
    return values


def _bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"not a boolean: {text!r}")


def _list(text: str) -> list[str]:
    return [t.strip() for t in text.split(",") if t.strip()]


@dataclass
class ExperimentConfig:
    raw: dict[str, str]

    @classmethod
    def load(cls, path: str | Path | None = None, overrides: dict[str, str] | None = None) -> "ExperimentConfig":
        raw = dict(DEFAULTS)
        if path is not None:
            try:
                text = Path(path).read_text(encoding="utf-8")
            except OSError as exc:
                raise ConfigError(f"cannot read config {path}: {exc}") from None
            raw.update(parse_config_text(text))
        for key, value in (overrides or {}).items():
            if key not in DEFAULTS:
                raise ConfigError(f"unknown key {key!r}")
            raw[key] = value
        cfg = cls(raw)
        cfg.validate()
        return cfg

    def get(self, key: str) -> str:
        return self.raw[key]

    def _num(self, key: str, kind=float):
        try:
            return kind(self.raw[key])
        except ValueError:
            raise ConfigError(f"{key}: expected {kind.__name__}, got {self.raw[key]!r}") from None

    def validate(self):
        try:
            self.synthetic_spec
            self.teacher_spec
            self.model_spec(1)
            self.train_config
            self.budget
            self.split_ratios
            self.metrics
        except ConfigError:
            raise
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        if self.raw["data.source"] not in ("synthetic", "files"):
            raise ConfigError("data.source must be 'synthetic' or 'files'")
        if self.raw["data.source"] == "files":
            missing = [k for k in ("data.run", "data.qrels", "data.features") if not self.raw[k]]
            if missing:
                raise ConfigError(f"data.source=files needs {', '.join(missing)}")
        elif any(self.raw[k] for k in ("data.run", "data.qrels", "data.features")):
            raise ConfigError("data.run/qrels/features are only valid with data.source=files")
        if self.strategy not in STRATEGIES:
            raise ConfigError(f"sample.strategy must be one of {STRATEGIES}")
        self.both_directions
        self.aggregate

    @property
    def seed(self) -> int:
        return self._num("seed", int)

    @property
    def out(self) -> Path:
        return Path(self.raw["out"])

    @property
    def synthetic_spec(self) -> SyntheticSpec:
        return SyntheticSpec(
            num_queries=self._num("synth.num_queries", int),
            docs_per_query=self._num("synth.docs_per_query", int),
            feature_dim=self._num("synth.feature_dim", int),
            label_noise_sd=self._num("synth.label_noise_sd"),
            initial_ranking_noise_sd=self._num("synth.initial_ranking_noise_sd"),
            num_grades=self._num("synth.num_grades", int),
        )

    @property
    def teacher_spec(self) -> TeacherSpec:
        return TeacherSpec(
            kind=self.raw["teacher.kind"],
            beta=self._num("teacher.beta"),
            order_bias=self._num("teacher.order_bias"),
            pointwise_noise_sd=self._num("teacher.pointwise_noise_sd"),
            tie_threshold=self._num("teacher.tie_threshold"),
            seed=self._num("teacher.seed", int),
        )

    @property
    def remote_options(self) -> dict:
        return {
            "timeout": self._num("teacher.timeout"),
            "max_retries": self._num("teacher.max_retries", int),
            "backoff": self._num("teacher.backoff"),
        }

    def model_spec(self, input_dim: int) -> ModelSpec:
        return ModelSpec(self.raw["model.kind"], input_dim, self._num("model.hidden_units", int))

    @property
    def train_config(self) -> TrainConfig:
        lr = self.raw["train.learning_rate"]
        return TrainConfig(
            learning_rate=float(lr) if lr else None,
            epochs=self._num("train.epochs", int),
            batch_size=self._num("train.batch_size", int),
            l2=self._num("train.l2"),
            seed=self.seed,
            loss=self.raw["train.loss"],
            label_mode=self.raw["train.label_mode"],
            early_stop_patience=self._num("train.early_stop_patience", int),
        )

    @property
    def strategy(self) -> str:
        return self.raw["sample.strategy"]

    @property
    def budget(self) -> Budget:
        return Budget.parse(self.raw["sample.budget"])

    @property
    def both_directions(self) -> bool:
        return _bool(self.raw["sample.both_directions"])

    @property
    def aggregate(self) -> bool:
        return _bool(self.raw["train.aggregate"])

    @property
    def split_ratios(self) -> tuple[float, float, float]:
        parts = _list(self.raw["split.ratios"])
        if len(parts) != 3:
            raise ConfigError("split.ratios needs three comma-separated numbers")
        return tuple(float(p) for p in parts)

    @property
    def metrics(self) -> list[str]:
        from .evaluation import _parse_metric

        names = _list(self.raw["eval.metrics"])
        for name in names:
            _parse_metric(name)
        return names

    @property
    def sweep_grid(self) -> tuple[list[str], list[str], list[int]]:
        strategies = _list(self.raw["sweep.strategies"])
        bad = [s for s in strategies if s not in STRATEGIES]
        if bad:
            raise ConfigError(f"unknown sweep strategies {bad}")
        budgets = _list(self.raw["sweep.budgets"])
        for b in budgets:
            Budget.parse(b)
        seeds = [int(s) for s in _list(self.raw["sweep.seeds"])]
        if not (strategies and budgets and seeds):
            raise ConfigError("sweep grid has an empty axis")
        return strategies, budgets, seeds
