"""Progressive training: probabilistic filtering of low-margin samples.

After the base network is trained, its own training set is scored and each
sample is removed with probability max(0, 2 - exp(|s1 - s2|)): zero-margin
samples always go, samples whose score margin reaches ln 2 always stay.
The surviving subset then fine-tunes the same checkpoint (weights are never
reinitialized). Filter draws are counter-based per (seed, sample index), so
the outcome is independent of processing order and of the training stream.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np

from . import network as net
from . import training as tr
from .dataio import Dataset
from .errors import DataError, DegenerateFilterError, ScoreError
from .tensor import Tensor, counter_uniform

KEEP_MARGIN = math.log(2.0)


def removal_probability(s1: float, s2: float) -> float:
    """p = max(0, 2 - exp(|s1 - s2|)), exactly."""
    if not (math.isfinite(s1) and math.isfinite(s2)):
        raise ScoreError(f"non-finite score pair ({s1}, {s2})")
    return max(0.0, 2.0 - math.exp(abs(s1 - s2)))


def removal_probabilities(scores: Tensor) -> np.ndarray:
    if not np.isfinite(scores).all():
        raise ScoreError("score matrix contains non-finite values")
    margin = np.abs(scores[:, 0] - scores[:, 1])
    return np.maximum(0.0, 2.0 - np.exp(margin))


@dataclass
class FilterOutcome:
    kept: List[int]
    removed: List[int]
    probabilities: np.ndarray
    seed: int
    scores: Optional[Tensor] = None

    @property
    def kept_fraction(self) -> float:
        total = len(self.kept) + len(self.removed)
        return len(self.kept) / total if total else 0.0

    def to_jsonl(self) -> str:
        removed = set(self.removed)
        lines = []
        for i, p in enumerate(self.probabilities):
            rec = {"index": i, "p": float(p), "kept": i not in removed}
            if self.scores is not None:
                rec["s1"] = float(self.scores[i, 0])
                rec["s2"] = float(self.scores[i, 1])
            lines.append(json.dumps(rec, sort_keys=True))
        return "\n".join(lines) + "\n"

    def save_jsonl(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.to_jsonl())


def filter_training_set(data: Dataset, scores: Tensor, seed: int) -> FilterOutcome:
    """Independent Bernoulli removals, reproducible from the seed alone."""
    if scores.ndim != 2 or scores.shape != (len(data), 2):
        raise DataError(f"score matrix shape {scores.shape} does not match "
                        f"dataset size {len(data)}")
    probs = removal_probabilities(scores)
    kept, removed = [], []
    for i, p in enumerate(probs):
        if counter_uniform(seed, i) < p:
            removed.append(i)
        else:
            kept.append(i)
    return FilterOutcome(kept=kept, removed=removed, probabilities=probs,
                         seed=seed, scores=scores)


@dataclass
class ProgressiveResult:
    base: net.Checkpoint       # model after the initial training pass
    final: net.Checkpoint      # model after filtered fine-tuning
    outcomes: List[FilterOutcome] = field(default_factory=list)
    history: tr.TrainHistory = field(default_factory=tr.TrainHistory)


def train_progressive(start: net.Checkpoint, data: Dataset,
                      config: tr.TrainConfig,
                      finetune_config: Optional[tr.TrainConfig] = None,
                      rounds: int = 1,
                      filter_seed: Optional[int] = None) -> ProgressiveResult:
    """Train, score the training set, filter, fine-tune; repeat for rounds > 1.

    Each later round re-filters only the previous round's kept subset.
    Returns both the base model and the progressively fine-tuned one.
    """
    if len(data) == 0:
        raise DataError("cannot run progressive training on an empty dataset")
    if rounds < 1:
        raise DataError("rounds must be >= 1")
    ft_config = finetune_config if finetune_config is not None else config
    seed = config.seed if filter_seed is None else filter_seed

    base, history = tr.train(start, data, config)
    model = base
    current = data
    index_map = np.arange(len(data))
    outcomes: List[FilterOutcome] = []
    for rnd in range(rounds):
        scores = tr.score_dataset(model, current, batch_size=config.batch_size)
        outcome = filter_training_set(current, scores, seed + rnd)
        outcomes.append(outcome)
        if not outcome.kept:
            raise DegenerateFilterError(
                f"round {rnd + 1}: the filter removed every training sample")
        index_map = index_map[np.asarray(outcome.kept, dtype=np.int64)]
        current = data.subset(index_map, note=f"#filtered_round{rnd + 1}")
        model, ft_hist = tr.train(model, current, ft_config)
        history.extend(ft_hist)
    return ProgressiveResult(base=base, final=model, outcomes=outcomes,
                             history=history)
