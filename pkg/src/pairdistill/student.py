"""Pointwise student scorers trained from teacher pseudo-labels.

The scorer is linear or a one-hidden-layer ReLU network over feature
vectors, trained by plain mini-batch gradient descent with hand-written
gradients. Two objectives are supported: a pairwise logistic loss over
teacher pair labels and mean squared error against pointwise teacher scores.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_array, check_is_fitted

from .evaluation import ndcg_at_k, opa

LOSSES = ("pairwise_logistic", "pointwise_mse")
CHECKPOINT_MAGIC = "pairdistill-checkpoint"
CHECKPOINT_VERSION = 1


class TrainingError(RuntimeError):
    pass


# -- model layout --------------------------------------------------------------


@dataclass(frozen=True)
class ModelSpec:
    kind: str = "linear"
    input_dim: int = 10
    hidden_units: int = 16

    def __post_init__(self):
        if self.kind not in ("linear", "mlp"):
            raise ValueError(f"unknown model kind {self.kind!r}")
        if self.input_dim < 1:
            raise ValueError("input_dim must be >= 1")
        if self.kind == "mlp" and self.hidden_units < 1:
            raise ValueError("hidden_units must be >= 1")

    @property
    def layout(self) -> list[tuple[str, tuple[int, ...]]]:
        d, h = self.input_dim, self.hidden_units
        if self.kind == "linear":
            return [("w", (d,)), ("b", ())]
        return [("W1", (h, d)), ("b1", (h,)), ("w2", (h,)), ("b2", ())]

    @property
    def n_params(self) -> int:
        return sum(int(np.prod(shape)) for _, shape in self.layout)

    def weight_mask(self) -> np.ndarray:
        """True for entries that take L2 (weights), False for biases."""
        mask = []
        for name, shape in self.layout:
            mask.append(np.full(int(np.prod(shape)), not name.startswith("b")))
        return np.concatenate(mask)


@dataclass
class StudentParams:
    spec: ModelSpec
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float).ravel()
        if self.values.size != self.spec.n_params:
            raise ValueError(f"{self.spec.kind} model needs {self.spec.n_params} values, got {self.values.size}")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("parameters must be finite")

    def unpack(self, values: np.ndarray | None = None) -> dict[str, np.ndarray | float]:
        values = self.values if values is None else values
        out, pos = {}, 0
        for name, shape in self.spec.layout:
            size = int(np.prod(shape))
            chunk = values[pos : pos + size]
            out[name] = float(chunk[0]) if shape == () else chunk.reshape(shape)
            pos += size
        return out

    def copy(self) -> "StudentParams":
        return StudentParams(self.spec, self.values.copy())


def init_params(spec: ModelSpec, seed: int = 0) -> StudentParams:
    """Zeros for the linear model; Glorot-uniform weights and zero biases for the MLP."""
    if spec.kind == "linear":
        return StudentParams(spec, np.zeros(spec.n_params))
    rng = np.random.default_rng(seed)
    d, h = spec.input_dim, spec.hidden_units
    b1 = math.sqrt(6.0 / (d + h))
    b2 = math.sqrt(6.0 / (h + 1))
    W1 = rng.uniform(-b1, b1, size=(h, d))
    w2 = rng.uniform(-b2, b2, size=h)
    return StudentParams(spec, np.concatenate([W1.ravel(), np.zeros(h), w2, [0.0]]))


# -- forward / backward ----------------------------------------------------------


def _check_features(params: StudentParams, X) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.shape[-1] != params.spec.input_dim:
        raise ValueError(f"feature length {X.shape[-1]} != model input_dim {params.spec.input_dim}")
    return X


def forward(params: StudentParams, features) -> float | np.ndarray:
    """Score one feature vector (returns a float) or a matrix of them (returns an array)."""
    X = _check_features(params, features)
    single = X.ndim == 1
    scores, _ = _forward(params, np.atleast_2d(X))
    return float(scores[0]) if single else scores


def _forward(params: StudentParams, X: np.ndarray, values: np.ndarray | None = None):
    p = params.unpack(values)
    if params.spec.kind == "linear":
        return X @ p["w"] + p["b"], None
    pre = X @ p["W1"].T + p["b1"]
    hidden = np.maximum(pre, 0.0)
    return hidden @ p["w2"] + p["b2"], hidden


def _backward(params: StudentParams, X: np.ndarray, hidden, dscores: np.ndarray, values=None) -> np.ndarray:
    """Gradient of ``sum(dscores * scores(X))`` with respect to the flat parameters."""
    if params.spec.kind == "linear":
        return np.concatenate([dscores @ X, [dscores.sum()]])
    p = params.unpack(values)
    dw2 = dscores @ hidden
    db2 = dscores.sum()
    dhidden = np.outer(dscores, p["w2"]) * (hidden > 0)
    dW1 = dhidden.T @ X
    db1 = dhidden.sum(axis=0)
    return np.concatenate([dW1.ravel(), db1, dw2, [db2]])


# -- loss terms ------------------------------------------------------------------


def softplus(z):
    """``log(1 + exp(z))`` without overflow."""
    z = np.asarray(z, dtype=float)
    out = np.maximum(z, 0.0) + np.log1p(np.exp(-np.abs(z)))
    return out if out.ndim else float(out)


def _sigmoid(z):
    z = np.asarray(z, dtype=float)
    e = np.exp(-np.abs(z))
    out = np.where(z >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
    return out if out.ndim else float(out)


def pairwise_logistic_term(s_i: float, s_j: float, y_ij: float, y_ji: float) -> tuple[float, float, float]:
    """One pairwise logistic term and its gradients with respect to ``s_i`` and ``s_j``.

    When the labels prefer ``j`` the loss is ``log(1 + exp(s_i - s_j))``;
    when they prefer ``i`` the roles swap; equal labels give no loss.
    """
    if not (math.isfinite(s_i) and math.isfinite(s_j)):
        raise ValueError(f"non-finite scores ({s_i}, {s_j})")
    if y_ij < y_ji:
        diff = s_i - s_j
        g = float(_sigmoid(diff))
        return float(softplus(diff)), g, -g
    if y_ij > y_ji:
        diff = s_j - s_i
        g = float(_sigmoid(diff))
        return float(softplus(diff)), -g, g
    return 0.0, 0.0, 0.0


def pointwise_mse_term(s: float, t: float) -> tuple[float, float]:
    diff = s - t
    return diff * diff, 2.0 * diff


def orient_pairs(pairs: np.ndarray, labels: np.ndarray) -> np.ndarray:
    """Turn labeled pairs into ``(winner, loser)`` rows, dropping label ties.

    Each unordered pair contributes once: a later row for the same two
    documents (in either order) is ignored.
    """
    pairs = np.asarray(pairs, dtype=int).reshape(-1, 2)
    labels = np.asarray(labels, dtype=float).reshape(-1, 2)
    lo = np.minimum(pairs[:, 0], pairs[:, 1])
    hi = np.maximum(pairs[:, 0], pairs[:, 1])
    _, first = np.unique(np.column_stack([lo, hi]), axis=0, return_index=True)
    first = np.sort(first)
    pairs, labels = pairs[first], labels[first]
    i_wins = labels[:, 0] > labels[:, 1]
    j_wins = labels[:, 0] < labels[:, 1]
    winners = np.where(i_wins, pairs[:, 0], pairs[:, 1])
    losers = np.where(i_wins, pairs[:, 1], pairs[:, 0])
    keep = i_wins | j_wins
    return np.column_stack([winners[keep], losers[keep]])


@dataclass
class Batch:
    """Loss inputs over the rows of ``X``.

    Pairwise batches carry ``pairs`` (row indices) and ``labels`` (``y_ij``,
    ``y_ji``); pointwise batches carry ``targets``.
    """

    X: np.ndarray
    pairs: np.ndarray | None = None
    labels: np.ndarray | None = None
    targets: np.ndarray | None = None

    @property
    def loss(self) -> str:
        return "pointwise_mse" if self.targets is not None else "pairwise_logistic"

    def __len__(self) -> int:
        return len(self.targets) if self.targets is not None else len(self.pairs)


def batch_loss(params: StudentParams, batch: Batch, l2: float = 0.0, values: np.ndarray | None = None) -> tuple[float, np.ndarray]:
    """Mean loss over the batch terms (plus L2 on weights) and its gradient."""
    if len(batch) == 0:
        raise ValueError("empty batch")
    vals = params.values if values is None else values
    X = _check_features(params, batch.X)
    scores, hidden = _forward(params, X, vals)
    dscores = np.zeros(len(X))
    if batch.targets is not None:
        diff = scores - batch.targets
        loss = float(np.mean(diff * diff))
        dscores += 2.0 * diff / len(diff)
    else:
        pairs = np.asarray(batch.pairs, dtype=int)
        labels = np.asarray(batch.labels, dtype=float)
        si, sj = scores[pairs[:, 0]], scores[pairs[:, 1]]
        sign = np.sign(labels[:, 1] - labels[:, 0])  # +1: j preferred, loss on s_i - s_j
        z = sign * (si - sj)
        active = sign != 0
        terms = np.where(active, softplus(z), 0.0)
        g = np.where(active, _sigmoid(z) * sign, 0.0) / len(pairs)
        loss = float(terms.mean())
        dscores += np.bincount(pairs[:, 0], g, len(X)) - np.bincount(pairs[:, 1], g, len(X))
    grad = _backward(params, X, hidden, dscores, vals)
    if l2:
        mask = params.spec.weight_mask()
        loss += 0.5 * l2 * float(np.sum(vals[mask] ** 2))
        grad = grad + l2 * np.where(mask, vals, 0.0)
    return loss, grad


def grad_check(model_spec: ModelSpec, params: StudentParams, batch: Batch, eps: float = 1e-5, l2: float = 0.0, floor: float = 1e-5) -> float:
    """Largest relative gap between analytic and central-difference gradients.

    The denominator is ``max(|analytic|, |numeric|, floor)``. Central
    differences carry rounding noise near ``1e-10`` at ``eps = 1e-5``, so an
    exactly-zero gradient (say the bias under a shift-invariant pairwise
    loss) would otherwise look like a large relative error.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    if len(batch) == 0:
        raise ValueError("cannot check gradients on an empty batch")
    if params.spec != model_spec:
        raise ValueError("params were built for a different model spec")
    _, analytic = batch_loss(params, batch, l2)
    numeric = np.empty_like(analytic)
    base = params.values
    for k in range(base.size):
        step = np.zeros_like(base)
        step[k] = eps
        up, _ = batch_loss(params, batch, l2, base + step)
        down, _ = batch_loss(params, batch, l2, base - step)
        numeric[k] = (up - down) / (2 * eps)
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return float(np.max(np.abs(analytic - numeric) / denom))


# -- training ------------------------------------------------------------------


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float | None = None
    epochs: int = 30
    batch_size: int = 512
    l2: float = 0.0
    seed: int = 0
    loss: str = "pairwise_logistic"
    label_mode: str = "hard"
    early_stop_patience: int = 5

    def __post_init__(self):
        if self.learning_rate is not None and self.learning_rate < 0:
            raise ValueError("learning_rate must be >= 0")
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be >= 1")
        if self.l2 < 0:
            raise ValueError("l2 must be >= 0")
        if self.loss not in LOSSES:
            raise ValueError(f"unknown loss {self.loss!r}")
        if self.label_mode not in ("hard", "soft"):
            raise ValueError(f"unknown label_mode {self.label_mode!r}")
        if self.early_stop_patience < 0:
            raise ValueError("early_stop_patience must be >= 0")


@dataclass
class TrainLog:
    epochs: list[tuple[int, float, float | None, float | None]] = field(default_factory=list)
    best_epoch: int | None = None

    def append(self, epoch: int, loss: float, val_opa: float | None, val_ndcg10: float | None):
        self.epochs.append((epoch, loss, val_opa, val_ndcg10))

    def __len__(self) -> int:
        return len(self.epochs)

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["epoch", "loss", "val_opa", "val_ndcg10"])
        for epoch, loss, vo, vn in self.epochs:
            writer.writerow([epoch, repr(loss), "" if vo is None else repr(vo), "" if vn is None else repr(vn)])
        return buf.getvalue()


def _mean_defined(values) -> float | None:
    values = [v for v in values if v is not None]
    return math.fsum(values) / len(values) if values else None


def validation_metrics(params: StudentParams, groups: Sequence[tuple[np.ndarray, np.ndarray]]) -> tuple[float | None, float | None]:
    """Mean OPA and NDCG@10 over ``(features, grades)`` query groups."""
    opas, ndcgs = [], []
    for X, grades in groups:
        scores, _ = _forward(params, np.asarray(X, dtype=float))
        opas.append(opa(scores, grades))
        order = np.lexsort((np.arange(len(scores)), -scores))
        ndcgs.append(ndcg_at_k(list(order), np.asarray(grades)[order], 10))
    return _mean_defined(opas), _mean_defined(ndcgs)


class DistilledRanker(BaseEstimator):
    """Pointwise ranker fit to teacher pair labels or teacher scores.

    ``fit(X, pairs=..., pair_labels=...)`` minimizes the pairwise logistic
    loss, where ``pairs`` index rows of ``X`` and ``pair_labels`` holds
    ``(y_ij, y_ji)`` per pair. ``fit(X, y)`` with ``loss="pointwise_mse"``
    regresses on teacher scores. ``predict`` returns one score per row.

    ``eval_groups`` is a list of ``(features, grades)`` per validation query;
    when given, validation OPA drives early stopping.
    """

    def __init__(
        self,
        model: str = "linear",
        hidden_units: int = 16,
        loss: str = "pairwise_logistic",
        learning_rate: float | None = None,
        epochs: int = 30,
        batch_size: int = 512,
        l2: float = 0.0,
        early_stop_patience: int = 5,
        random_state: int = 0,
    ):
        self.model = model
        self.hidden_units = hidden_units
        self.loss = loss
        self.learning_rate = learning_rate
        self.epochs = epochs
        self.batch_size = batch_size
        self.l2 = l2
        self.early_stop_patience = early_stop_patience
        self.random_state = random_state

    def _lr(self) -> float:
        if self.learning_rate is not None:
            return float(self.learning_rate)
        return 0.1 if self.model == "linear" else 0.01

    def fit(self, X, y=None, *, pairs=None, pair_labels=None, eval_groups=None, init=None):
        X = check_array(X, dtype=float)
        spec = ModelSpec(self.model, X.shape[1], self.hidden_units)
        TrainConfig(self.learning_rate, self.epochs, self.batch_size, self.l2, self.random_state, self.loss, "hard", self.early_stop_patience)
        if self.loss == "pairwise_logistic":
            if pairs is None or pair_labels is None:
                raise ValueError("pairwise loss needs pairs and pair_labels")
            terms = orient_pairs(pairs, pair_labels)
            if len(terms) and (terms.min() < 0 or terms.max() >= len(X)):
                raise ValueError("pair index out of range")
        else:
            if y is None:
                raise ValueError("pointwise loss needs targets y")
            y = check_array(np.asarray(y, dtype=float).reshape(-1, 1)).ravel()
            if len(y) != len(X):
                raise ValueError("X and y differ in length")
            terms = np.arange(len(X))
        if len(terms) == 0:
            raise TrainingError("no training terms: every pair label is a tie or the set is empty")

        params = init.copy() if init is not None else init_params(spec, self.random_state)
        if params.spec != spec:
            raise ValueError("init params do not match the model spec")
        rng = np.random.default_rng(self.random_state)
        lr = self._lr()
        log = TrainLog()
        best = (-math.inf, params.copy(), None)
        stale = 0
        for epoch in range(1, self.epochs + 1):
            order = rng.permutation(len(terms))
            total, count = 0.0, 0
            for start in range(0, len(order), self.batch_size):
                chunk = terms[order[start : start + self.batch_size]]
                if self.loss == "pairwise_logistic":
                    local = np.arange(2 * len(chunk)).reshape(-1, 2)
                    batch = Batch(X[chunk.ravel()], pairs=local, labels=np.tile([1.0, 0.0], (len(chunk), 1)))
                else:
                    batch = Batch(X[chunk], targets=y[chunk])
                with np.errstate(over="ignore", invalid="ignore"):
                    loss, grad = batch_loss(params, batch, self.l2)
                if not math.isfinite(loss):
                    raise TrainingError(f"non-finite loss {loss} at epoch {epoch}, batch starting at term {start}")
                total += loss * len(chunk)
                count += len(chunk)
                if lr:
                    params.values -= lr * grad
            if not np.all(np.isfinite(params.values)):
                raise TrainingError(f"parameters diverged at epoch {epoch}; lower the learning rate")
            val_opa, val_ndcg = validation_metrics(params, eval_groups) if eval_groups else (None, None)
            log.append(epoch, total / count, val_opa, val_ndcg)
            if val_opa is not None and val_opa > best[0]:
                best, stale = (val_opa, params.copy(), epoch), 0
            else:
                stale += 1
            if self.early_stop_patience and val_opa is not None and stale >= self.early_stop_patience:
                break
        if self.early_stop_patience and best[2] is not None:
            params = best[1]
            log.best_epoch = best[2]
        else:
            log.best_epoch = len(log)
        self.params_ = params
        self.train_log_ = log
        self.n_features_in_ = X.shape[1]
        return self

    def predict(self, X) -> np.ndarray:
        check_is_fitted(self, "params_")
        X = check_array(X, dtype=float)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"X has {X.shape[1]} features, model expects {self.n_features_in_}")
        return _forward(self.params_, X)[0]

    decision_function = predict


# -- dataset-level helpers -------------------------------------------------------


def train(dataset, labels, split, model_spec: ModelSpec, config: TrainConfig) -> tuple[StudentParams, TrainLog]:
    """Fit a student on the training queries of ``dataset``.

    ``labels`` is ``{qid: (pairs, pair_labels)}`` with candidate-index pairs
    for the pairwise loss, or ``{(qid, docid): score}`` for the pointwise loss.
    Validation queries of ``split`` feed early stopping.
    """
    train_queries = sorted(split.train)
    if not train_queries:
        raise TrainingError("empty training set")
    blocks, offsets, pos = [], {}, 0
    for q in train_queries:
        docs = dataset.candidates[q].docs
        blocks.append(dataset.features.matrix(q, docs))
        offsets[q] = pos
        pos += len(docs)
    X = np.vstack(blocks)
    if X.shape[1] != model_spec.input_dim:
        raise ValueError(f"features have dim {X.shape[1]}, model expects {model_spec.input_dim}")

    est = DistilledRanker(
        model=model_spec.kind,
        hidden_units=model_spec.hidden_units,
        loss=config.loss,
        learning_rate=config.learning_rate,
        epochs=config.epochs,
        batch_size=config.batch_size,
        l2=config.l2,
        early_stop_patience=config.early_stop_patience,
        random_state=config.seed,
    )
    eval_groups = [
        (dataset.features.matrix(q, dataset.candidates[q].docs), dataset.qrels.grades(q, dataset.candidates[q].docs))
        for q in sorted(split.validation)
    ]
    if config.loss == "pairwise_logistic":
        all_pairs, all_labels = [], []
        for q in train_queries:
            if q not in labels:
                continue
            pairs, lab = labels[q]
            all_pairs.append(np.asarray(pairs, dtype=int).reshape(-1, 2) + offsets[q])
            all_labels.append(np.asarray(lab, dtype=float).reshape(-1, 2))
        if not all_pairs:
            raise TrainingError("no pair labels for any training query")
        est.fit(X, pairs=np.vstack(all_pairs), pair_labels=np.vstack(all_labels), eval_groups=eval_groups or None)
    else:
        targets = []
        for q in train_queries:
            for d in dataset.candidates[q].docs:
                if (q, d) not in labels:
                    raise TrainingError(f"missing teacher score for ({q}, {d})")
                targets.append(labels[(q, d)])
        est.fit(X, np.array(targets), eval_groups=eval_groups or None)
    return est.params_, est.train_log_


def predict_run(params: StudentParams, dataset, queries: Sequence[str] | None = None) -> dict[str, list[tuple[str, float]]]:
    """Score every candidate once and rank, ties broken by initial rank."""
    from .prp import rank_by_scores

    out = {}
    for q in sorted(queries if queries is not None else dataset.candidates):
        cs = dataset.candidates[q]
        scores = forward(params, dataset.features.matrix(q, cs.docs))
        out[q] = rank_by_scores(np.atleast_1d(scores), cs)
    return out


# -- checkpoints ---------------------------------------------------------------


def dumps_checkpoint(params: StudentParams) -> str:
    spec = params.spec
    lines = [
        f"{CHECKPOINT_MAGIC} {CHECKPOINT_VERSION}",
        f"kind {spec.kind}",
        f"input_dim {spec.input_dim}",
        f"hidden_units {spec.hidden_units}",
        f"n_params {spec.n_params}",
    ]
    lines.extend(float(v).hex() for v in params.values)
    return "\n".join(lines) + "\n"


def loads_checkpoint(text: str) -> StudentParams:
    lines = text.splitlines()
    if not lines or not lines[0].startswith(CHECKPOINT_MAGIC):
        raise ValueError("not a pairdistill checkpoint")
    version = int(lines[0].split()[1])
    if version != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {version}")
    header = dict(line.split(" ", 1) for line in lines[1:5])
    spec = ModelSpec(header["kind"], int(header["input_dim"]), int(header["hidden_units"]))
    values = [float.fromhex(v) for v in lines[5:] if v.strip()]
    if len(values) != int(header["n_params"]):
        raise ValueError("checkpoint truncated")
    return StudentParams(spec, np.array(values))


def save_checkpoint(params: StudentParams, path: str | Path):
    Path(path).write_text(dumps_checkpoint(params), encoding="utf-8")


def load_checkpoint(path: str | Path) -> StudentParams:
    return loads_checkpoint(Path(path).read_text(encoding="utf-8"))
