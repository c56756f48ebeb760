"""Trainable linear scorers over hashed sparse features.

Feature layout: the first QUERY_FEATURE_SLOTS components are reserved for the
dense query-feature passthrough; all hashed token features land in
[QUERY_FEATURE_SLOTS, dim).  Tokens are prefixed with a channel tag before
hashing ("q:" question, "d:" document, "o:" question/document overlap,
"c:" context, "x:" extra text), and each occurrence contributes the token's
hash sign to its bucket, like the retrieval encoder.
"""

import math
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .data import Sample
from .errors import ConfigError, DataFormatError, DimensionMismatchError
from .text import hash_sign, token_hash, tokenize

DEFAULT_FEATURE_DIM = 4096
QUERY_FEATURE_SLOTS = 64

_CKPT_MAGIC = b"BMDL"
_CKPT_VERSION = 1


@dataclass(frozen=True)
class ChannelFlags:
    """Which feature channels contribute; disabled channels contribute zeros."""

    question: bool = True
    doc: bool = True
    overlap: bool = True
    context: bool = True
    query_features: bool = True
    extra: bool = True

    @classmethod
    def none(cls) -> "ChannelFlags":
        return cls(False, False, False, False, False, False)


@dataclass(frozen=True, eq=False)
class FeatureVector:
    """Sparse vector: sorted unique indices with summed values."""

    dim: int
    indices: np.ndarray
    values: np.ndarray

    @classmethod
    def from_pairs(cls, dim: int, indices, values) -> "FeatureVector":
        idx = np.asarray(indices, dtype=np.int64)
        val = np.asarray(values, dtype=np.float64)
        if idx.size != val.size:
            raise DimensionMismatchError("indices and values must have equal length")
        if idx.size == 0:
            return cls(dim, idx, val)
        if idx.min() < 0 or idx.max() >= dim:
            raise DimensionMismatchError(f"feature index out of range for dimension {dim}")
        if not np.all(np.isfinite(val)):
            raise DataFormatError("feature values must be finite")
        uniq, inverse = np.unique(idx, return_inverse=True)
        summed = np.bincount(inverse, weights=val)
        return cls(dim, uniq, summed)

    @classmethod
    def empty(cls, dim: int) -> "FeatureVector":
        return cls(dim, np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.float64))

    @property
    def nnz(self) -> int:
        return int(self.indices.size)

    def dot(self, weights: np.ndarray) -> float:
        if self.nnz == 0:
            return 0.0
        return float(weights[self.indices] @ self.values)

    def scaled(self, factor: float) -> "FeatureVector":
        return FeatureVector(self.dim, self.indices, self.values * factor)

    def to_dense(self) -> np.ndarray:
        dense = np.zeros(self.dim, dtype=np.float64)
        dense[self.indices] = self.values
        return dense

    @staticmethod
    def combine(left: "FeatureVector", right: "FeatureVector") -> "FeatureVector":
        if left.dim != right.dim:
            raise DimensionMismatchError("cannot combine vectors of different dimension")
        return FeatureVector.from_pairs(
            left.dim,
            np.concatenate([left.indices, right.indices]),
            np.concatenate([left.values, right.values]),
        )


def _hashed_entry(tag: str, token: str, dim: int) -> tuple[int, float]:
    name = f"{tag}:{token}"
    bucket = QUERY_FEATURE_SLOTS + token_hash(name) % (dim - QUERY_FEATURE_SLOTS)
    return bucket, hash_sign(name)


def extra_features(extra_text: str | None, dim: int = DEFAULT_FEATURE_DIM,
                   enabled: bool = True) -> FeatureVector:
    """Just the extra-text channel; used for prompts and candidate answers."""
    if not enabled or not extra_text:
        return FeatureVector.empty(dim)
    idx, val = [], []
    for tok in tokenize(extra_text):
        bucket, sign = _hashed_entry("x", tok, dim)
        idx.append(bucket)
        val.append(sign)
    return FeatureVector.from_pairs(dim, idx, val)


def featurize(sample: Sample, doc_text: str, extra_text: str | None = None,
              channels: ChannelFlags = ChannelFlags(),
              dim: int = DEFAULT_FEATURE_DIM) -> FeatureVector:
    """Hashed features of a (sample, document, extra text) triple."""
    if dim <= QUERY_FEATURE_SLOTS:
        raise DimensionMismatchError(f"feature dimension must exceed {QUERY_FEATURE_SLOTS}")
    idx: list[int] = []
    val: list[float] = []

    def add(tag: str, tokens) -> None:
        for tok in tokens:
            bucket, sign = _hashed_entry(tag, tok, dim)
            idx.append(bucket)
            val.append(sign)

    q_tokens = tokenize(sample.question)
    d_tokens = tokenize(doc_text)
    if channels.question:
        add("q", q_tokens)
    if channels.doc:
        add("d", d_tokens)
    if channels.overlap:
        shared = sorted(set(q_tokens) & set(d_tokens))
        add("o", shared)
        if shared:
            # Aggregate overlap size; "*count*" cannot collide with a real
            # token because normalized tokens are alphanumeric.
            bucket, sign = _hashed_entry("o", "*count*", dim)
            idx.append(bucket)
            val.append(sign * len(shared))
    if channels.context:
        context = " ".join((sample.caption, *sample.object_labels, *sample.ocr_strings))
        add("c", tokenize(context))
    if channels.query_features and sample.query_features is not None:
        if len(sample.query_features) > QUERY_FEATURE_SLOTS:
            raise DimensionMismatchError(
                f"query_features dimension {len(sample.query_features)} exceeds "
                f"{QUERY_FEATURE_SLOTS} reserved slots"
            )
        for i, value in enumerate(sample.query_features):
            idx.append(i)
            val.append(value)
    if channels.extra and extra_text:
        add("x", tokenize(extra_text))
    return FeatureVector.from_pairs(dim, idx, val)


@dataclass
class LinearScorer:
    """Single sigmoid head: weights plus bias."""

    weights: np.ndarray
    bias: float = 0.0

    @classmethod
    def zeros(cls, dim: int) -> "LinearScorer":
        return cls(weights=np.zeros(dim, dtype=np.float64), bias=0.0)

    @property
    def dim(self) -> int:
        return int(self.weights.shape[0])

    def copy(self) -> "LinearScorer":
        return LinearScorer(weights=self.weights.copy(), bias=float(self.bias))


@dataclass
class SoftmaxScorer:
    """One linear head per class with a shared softmax."""

    weights: np.ndarray  # (n_classes, dim)
    bias: np.ndarray  # (n_classes,)

    @classmethod
    def zeros(cls, n_classes: int, dim: int) -> "SoftmaxScorer":
        return cls(weights=np.zeros((n_classes, dim), dtype=np.float64),
                   bias=np.zeros(n_classes, dtype=np.float64))

    @property
    def n_classes(self) -> int:
        return int(self.weights.shape[0])

    @property
    def dim(self) -> int:
        return int(self.weights.shape[1])

    def copy(self) -> "SoftmaxScorer":
        return SoftmaxScorer(weights=self.weights.copy(), bias=self.bias.copy())


class ClassExtras:
    """Per-class extra features packed into padded index/value matrices."""

    def __init__(self, vectors: Sequence[FeatureVector], dim: int):
        if any(v.dim != dim for v in vectors):
            raise DimensionMismatchError("extra vectors must match model dimension")
        width = max((v.nnz for v in vectors), default=0)
        n = len(vectors)
        self.indices = np.zeros((n, max(width, 1)), dtype=np.int64)
        self.values = np.zeros((n, max(width, 1)), dtype=np.float64)
        for row, vec in enumerate(vectors):
            self.indices[row, : vec.nnz] = vec.indices
            self.values[row, : vec.nnz] = vec.values
        self._rows = np.arange(n)[:, None]

    def scores(self, weights: np.ndarray) -> np.ndarray:
        return (weights[self._rows, self.indices] * self.values).sum(axis=1)

    def accumulate(self, grad: np.ndarray, coeff: np.ndarray) -> None:
        grad[self._rows, self.indices] += coeff[:, None] * self.values


def _sigmoid(z: float) -> float:
    if z >= 0:
        return 1.0 / (1.0 + math.exp(-z))
    ez = math.exp(z)
    return ez / (1.0 + ez)


def predict_prob(model: LinearScorer, x: FeatureVector) -> float:
    """Sigmoid of the linear score; strictly inside (0, 1)."""
    if x.dim != model.dim:
        raise DimensionMismatchError(f"feature dim {x.dim} != model dim {model.dim}")
    return _sigmoid(x.dot(model.weights) + model.bias)


def class_scores(model: SoftmaxScorer, x: FeatureVector | Sequence[FeatureVector],
                 extras: ClassExtras | None = None) -> np.ndarray:
    """Raw linear score per class; `x` may be shared or one vector per class."""
    scores = model.bias.copy()
    if isinstance(x, FeatureVector):
        if x.dim != model.dim:
            raise DimensionMismatchError(f"feature dim {x.dim} != model dim {model.dim}")
        if x.nnz:
            scores += model.weights[:, x.indices] @ x.values
    else:
        if len(x) != model.n_classes:
            raise DimensionMismatchError("need one feature vector per class")
        for c, vec in enumerate(x):
            scores[c] += vec.dot(model.weights[c])
    if extras is not None:
        scores += extras.scores(model.weights)
    return scores


def _softmax(scores: np.ndarray) -> np.ndarray:
    shifted = scores - scores.max()
    exp = np.exp(shifted)
    return exp / exp.sum()


_LOG_FLOOR = 1e-300


def bce_loss(p: float, label: int, weight: float = 1.0) -> float:
    if label:
        return -weight * math.log(max(p, _LOG_FLOOR))
    return -weight * math.log(max(1.0 - p, _LOG_FLOOR))


def grad_bce(model: LinearScorer, x: FeatureVector, label: int,
             weight: float = 1.0) -> tuple[FeatureVector, float]:
    """Gradient of the weighted negative log-likelihood: ((p - y) * x, p - y)."""
    p = predict_prob(model, x)
    coeff = weight * (p - float(label))
    return x.scaled(coeff), coeff


def grad_ce(model: SoftmaxScorer, x: FeatureVector | Sequence[FeatureVector], target: int,
            extras: ClassExtras | None = None) -> tuple[np.ndarray, np.ndarray, float]:
    """Dense cross-entropy gradient (dW, db) and the loss at (x, target)."""
    if not 0 <= target < model.n_classes:
        raise ConfigError(f"target class {target} out of range")
    probs = _softmax(class_scores(model, x, extras))
    loss = -math.log(max(float(probs[target]), _LOG_FLOOR))
    coeff = probs.copy()
    coeff[target] -= 1.0
    grad_w = np.zeros_like(model.weights)
    if isinstance(x, FeatureVector):
        if x.nnz:
            grad_w[:, x.indices] += coeff[:, None] * x.values[None, :]
    else:
        for c, vec in enumerate(x):
            if vec.nnz:
                grad_w[c, vec.indices] += coeff[c] * vec.values
    if extras is not None:
        extras.accumulate(grad_w, coeff)
    return grad_w, coeff, loss


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-4
    warmup_steps: int = 1000
    warmup_factor: float = 0.05
    schedule: str = "cosine"
    epochs: int = 10
    batch_size: int = 8
    rng_seed: int = 0

    def __post_init__(self):
        if self.learning_rate < 0:
            raise ConfigError("learning_rate must be >= 0")
        if self.warmup_steps < 0:
            raise ConfigError("warmup_steps must be >= 0")
        if not 0 < self.warmup_factor <= 1:
            raise ConfigError("warmup_factor must be in (0, 1]")
        if self.schedule != "cosine":
            raise ConfigError(f"unsupported schedule {self.schedule!r}")
        if self.epochs < 0:
            raise ConfigError("epochs must be >= 0")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")


def learning_rate_at(step: int, total_steps: int, config: TrainConfig) -> float:
    """Linear warmup from warmup_factor*base to base, then cosine decay to 0."""
    base = config.learning_rate
    warmup = config.warmup_steps
    if warmup > 0 and step < warmup:
        return base * (config.warmup_factor + (1.0 - config.warmup_factor) * step / warmup)
    if total_steps <= warmup:
        return base
    progress = min(max((step - warmup) / (total_steps - warmup), 0.0), 1.0)
    return base * 0.5 * (1.0 + math.cos(math.pi * progress))


def _fit_binary(model: LinearScorer, examples, config: TrainConfig, schedule_span):
    weights = model.weights.copy()
    bias = float(model.bias)
    n = len(examples)
    steps_per_epoch = math.ceil(n / config.batch_size)
    step, total_steps = schedule_span or (0, config.epochs * steps_per_epoch)
    rng = np.random.default_rng(config.rng_seed)
    losses = []
    for _ in range(config.epochs):
        order = rng.permutation(n)
        epoch_loss = 0.0
        for start in range(0, n, config.batch_size):
            batch = order[start : start + config.batch_size]
            grad = np.zeros_like(weights)
            grad_b = 0.0
            for i in batch:
                x, label, weight = examples[i]
                z = (x.values @ weights[x.indices] if x.nnz else 0.0) + bias
                p = _sigmoid(z)
                coeff = weight * (p - float(label))
                if x.nnz:
                    grad[x.indices] += coeff * x.values
                grad_b += coeff
                epoch_loss += bce_loss(p, label, weight)
            lr = learning_rate_at(step, total_steps, config)
            scale = lr / len(batch)
            weights -= scale * grad
            bias -= scale * grad_b
            step += 1
        losses.append(epoch_loss / n)
    return LinearScorer(weights=weights, bias=bias), losses


def _fit_multiclass(model: SoftmaxScorer, examples, config: TrainConfig,
                    class_extras: ClassExtras | None, schedule_span):
    weights = model.weights.copy()
    bias = model.bias.copy()
    n = len(examples)
    steps_per_epoch = math.ceil(n / config.batch_size)
    step, total_steps = schedule_span or (0, config.epochs * steps_per_epoch)
    rng = np.random.default_rng(config.rng_seed)
    losses = []
    for _ in range(config.epochs):
        order = rng.permutation(n)
        epoch_loss = 0.0
        for start in range(0, n, config.batch_size):
            batch = order[start : start + config.batch_size]
            grad = np.zeros_like(weights)
            grad_b = np.zeros_like(bias)
            for i in batch:
                x, target = examples[i]
                scores = bias.copy()
                if x.nnz:
                    scores += weights[:, x.indices] @ x.values
                if class_extras is not None:
                    scores += class_extras.scores(weights)
                probs = _softmax(scores)
                epoch_loss += -math.log(max(float(probs[target]), _LOG_FLOOR))
                coeff = probs
                coeff[target] -= 1.0
                if x.nnz:
                    grad[:, x.indices] += coeff[:, None] * x.values[None, :]
                if class_extras is not None:
                    class_extras.accumulate(grad, coeff)
                grad_b += coeff
            lr = learning_rate_at(step, total_steps, config)
            scale = lr / len(batch)
            weights -= scale * grad
            bias -= scale * grad_b
            step += 1
        losses.append(epoch_loss / n)
    return SoftmaxScorer(weights=weights, bias=bias), losses


def sgd_fit(model, examples: Sequence, config: TrainConfig,
            class_extras: ClassExtras | None = None,
            schedule_span: tuple[int, int] | None = None):
    """Minibatch SGD; returns (trained copy, per-epoch mean loss).

    Binary examples are (x, label) or (x, label, weight) with a LinearScorer;
    multiclass examples are (x, target) with a SoftmaxScorer, where extra
    per-class features may be supplied once via class_extras.

    schedule_span=(start_step, total_steps) positions this fit inside a longer
    learning-rate schedule, so alternating training phases share one warmup
    and one cosine decay instead of restarting per phase.
    """
    if not examples:
        raise ValueError("empty training set")
    if isinstance(model, LinearScorer):
        normalized = [(e[0], e[1], e[2] if len(e) > 2 else 1.0) for e in examples]
        return _fit_binary(model, normalized, config, schedule_span)
    if isinstance(model, SoftmaxScorer):
        return _fit_multiclass(model, list(examples), config, class_extras, schedule_span)
    raise ConfigError(f"cannot fit model of type {type(model).__name__}")


def save_checkpoint(path: str | Path, model: LinearScorer | SoftmaxScorer,
                    vocab: tuple[str, ...] = ()) -> None:
    """Little-endian binary: header (dim, head count), vocab table, float32 params."""
    if isinstance(model, LinearScorer):
        rows = [(model.weights, model.bias)]
    else:
        rows = [(model.weights[c], float(model.bias[c])) for c in range(model.n_classes)]
    with Path(path).open("wb") as handle:
        handle.write(_CKPT_MAGIC)
        handle.write(struct.pack("<IIII", _CKPT_VERSION, rows[0][0].shape[0], len(rows), len(vocab)))
        for word in vocab:
            raw = word.encode("utf-8")
            handle.write(struct.pack("<I", len(raw)))
            handle.write(raw)
        for weights, bias in rows:
            handle.write(weights.astype("<f4").tobytes(order="C"))
            handle.write(struct.pack("<f", bias))


def load_checkpoint(path: str | Path):
    """Inverse of save_checkpoint; returns (model, vocab)."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"no such file: {path}")
    with path.open("rb") as handle:
        if handle.read(4) != _CKPT_MAGIC:
            raise DataFormatError(f"{path}: not a model checkpoint")
        version, dim, heads, vocab_count = struct.unpack("<IIII", handle.read(16))
        if version != _CKPT_VERSION:
            raise DataFormatError(f"{path}: unsupported checkpoint version {version}")
        vocab = []
        for _ in range(vocab_count):
            (length,) = struct.unpack("<I", handle.read(4))
            vocab.append(handle.read(length).decode("utf-8"))
        weights = np.zeros((heads, dim), dtype=np.float64)
        bias = np.zeros(heads, dtype=np.float64)
        for row in range(heads):
            weights[row] = np.frombuffer(handle.read(dim * 4), dtype="<f4").astype(np.float64)
            (bias[row],) = struct.unpack("<f", handle.read(4))
    if vocab_count == 0 and heads == 1:
        return LinearScorer(weights=weights[0], bias=float(bias[0])), ()
    return SoftmaxScorer(weights=weights, bias=bias), tuple(vocab)
