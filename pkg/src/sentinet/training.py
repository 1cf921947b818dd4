"""Logistic objective, mini-batch SGD with momentum, and the training loop.

The network head is a two-class softmax; the loss is the negated mean
conditional log-likelihood of the binary sentiment labels. Mini-batches are
drawn without replacement inside each epoch (reshuffled every epoch from the
config seed), so one epoch covers every sample exactly once.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np

from . import network as net
from .dataio import Dataset
from .errors import ConfigError, DataError, LabelError, ShapeError
from .tensor import Rng, Tensor

PROB_EPS = 1e-12


@dataclass
class TrainConfig:
    batch_size: int = 256
    iterations: int = 1000
    learning_rate: float = 0.01
    lr_decay: float = 0.1
    decay_interval: Optional[int] = None  # default: every 40% of the budget
    momentum: float = 0.9
    weight_decay: float = 5e-4
    seed: int = 0
    log_interval: int = 50

    def __post_init__(self):
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.iterations < 0:
            raise ConfigError("iterations must be >= 0")
        if self.learning_rate <= 0 or self.lr_decay <= 0:
            raise ConfigError("learning rate and decay factor must be > 0")
        if not 0.0 <= self.momentum < 1.0:
            raise ConfigError("momentum must lie in [0, 1)")
        if self.weight_decay < 0:
            raise ConfigError("weight_decay must be >= 0")
        if self.log_interval < 1:
            raise ConfigError("log_interval must be >= 1")

    def rate_at(self, step: int) -> float:
        """Learning rate for local step ``step`` (0-based) of this run."""
        interval = self.decay_interval
        if interval is None:
            interval = max(1, math.ceil(0.4 * self.iterations))
        return self.learning_rate * self.lr_decay ** (step // interval)


@dataclass
class HistoryRecord:
    iteration: int
    loss: float
    learning_rate: float
    eval_accuracy: Optional[float] = None


@dataclass
class TrainHistory:
    records: List[HistoryRecord] = field(default_factory=list)

    def append(self, rec: HistoryRecord) -> None:
        if self.records and rec.iteration <= self.records[-1].iteration:
            raise DataError("history iterations must be strictly increasing")
        self.records.append(rec)

    def extend(self, other: "TrainHistory") -> None:
        for rec in other.records:
            self.append(rec)

    def to_csv(self) -> str:
        lines = ["iteration,loss,learning_rate,eval_accuracy"]
        for r in self.records:
            acc = "" if r.eval_accuracy is None else repr(r.eval_accuracy)
            lines.append(f"{r.iteration},{r.loss!r},{r.learning_rate!r},{acc}")
        return "\n".join(lines) + "\n"

    def save_csv(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.to_csv())


def class_probabilities(logits: Tensor) -> Tensor:
    """Two-class softmax scores, rows summing to one."""
    if logits.ndim != 2 or logits.shape[1] != 2:
        raise ShapeError(f"logits must be [N,2], got {logits.shape}")
    return net.softmax_scores(logits)


def _check_labels(labels) -> np.ndarray:
    arr = np.asarray(labels)
    if arr.ndim != 1:
        raise LabelError("labels must be a flat list")
    if not np.isin(arr, (0, 1)).all():
        bad = arr[~np.isin(arr, (0, 1))][0]
        raise LabelError(f"label {bad!r} outside {{0, 1}}")
    return arr.astype(np.int64)


def logistic_loss(probs: Tensor, labels) -> float:
    """Negated mean log-likelihood of the true class."""
    y = _check_labels(labels)
    if probs.shape != (y.size, 2):
        raise ShapeError(f"probs shape {probs.shape} does not match {y.size} labels")
    p_true = np.clip(probs[np.arange(y.size), y], PROB_EPS, 1.0 - PROB_EPS)
    return float(-np.mean(np.log(p_true)))


def loss_gradient(probs: Tensor, labels) -> Tensor:
    """Gradient of logistic_loss w.r.t. the logits: (probs - one_hot) / N."""
    y = _check_labels(labels)
    if probs.shape != (y.size, 2):
        raise ShapeError(f"probs shape {probs.shape} does not match {y.size} labels")
    grad = probs.copy()
    grad[np.arange(y.size), y] -= 1.0
    return grad / y.size


def sgd_step(c: net.Checkpoint, grads, config: TrainConfig,
             lr: Optional[float] = None) -> net.Checkpoint:
    """One momentum step, in place: v <- mu v - lr (g + wd p); p <- p + v."""
    rate = config.learning_rate if lr is None else lr
    for name, p in c.params.items():
        g = grads.get(name)
        if g is None:
            continue
        if g.shape != p.shape:
            raise ShapeError(f"gradient for {name} has shape {g.shape}, "
                             f"parameter has {p.shape}")
        v = c.velocity[name]
        v *= config.momentum
        v -= rate * (g + config.weight_decay * p)
        p += v
    c.iteration += 1
    return c


def epoch_batches(n: int, batch_size: int, rng: Rng):
    """Yield index arrays covering 0..n-1 exactly once, reshuffled each epoch."""
    while True:
        perm = rng.permutation(n)
        for start in range(0, n, batch_size):
            yield perm[start:start + batch_size]


def _eval_accuracy(c: net.Checkpoint, data: Dataset, batch_size: int) -> float:
    scores = score_dataset(c, data, batch_size=batch_size)
    pred = np.argmax(scores, axis=1)
    return float(np.mean(pred == data.labels()))


def train(c: net.Checkpoint, data: Dataset, config: TrainConfig,
          eval_data: Optional[Dataset] = None) -> Tuple[net.Checkpoint, TrainHistory]:
    """Run the iteration budget of mini-batch SGD; the input checkpoint is
    left untouched and a trained copy is returned."""
    if len(data) == 0:
        raise DataError("cannot train on an empty dataset")
    labels_all = data.labels()
    side = c.spec.input_shape[1]
    model = c.clone()
    history = TrainHistory()
    if config.iterations == 0:
        return model, history

    stream = epoch_batches(len(data), config.batch_size,
                           Rng(config.seed).derive("shuffle"))
    for step in range(config.iterations):
        idx = next(stream)
        batch = data.batch(idx, side=side)
        y = labels_all[idx]
        logits, caches = net.forward_logits(model, batch, keep_caches=True)
        probs = net.softmax_scores(logits)
        loss = logistic_loss(probs, y)
        grads = net.backward(model, caches, loss_gradient(probs, y))
        rate = config.rate_at(step)
        sgd_step(model, grads, config, lr=rate)
        if (step + 1) % config.log_interval == 0 or step == config.iterations - 1:
            acc = None
            if eval_data is not None:
                acc = _eval_accuracy(model, eval_data, config.batch_size)
            history.append(HistoryRecord(model.iteration, loss, rate, acc))
    return model, history


def score_dataset(c: net.Checkpoint, data: Dataset,
                  batch_size: int = 256) -> Tensor:
    """Class probabilities for every sample, in dataset order."""
    if len(data) == 0:
        raise DataError("cannot score an empty dataset")
    side = c.spec.input_shape[1]
    rows = []
    for start in range(0, len(data), batch_size):
        idx = range(start, min(start + batch_size, len(data)))
        rows.append(net.forward(c, data.batch(idx, side=side)))
    return np.vstack(rows)
