"""K-fold domain transfer: fine-tune a pre-trained model on a target set.

A seed-deterministic shuffle splits the target into k folds differing in
size by at most one. For each fold the *same* pre-trained checkpoint is
fine-tuned on the other k-1 folds and evaluated on the held-out fold, so
every sample is scored exactly once. Macro averages (mean of per-fold
metrics) are the headline numbers; micro totals from the pooled confusion
counts are reported alongside.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Optional, Tuple

import numpy as np

from . import metrics as M
from . import network as net
from . import training as tr
from .dataio import Dataset
from .errors import DataError
from .tensor import Rng


@dataclass
class FoldPlan:
    k: int
    folds: List[List[int]]
    seed: int

    def __post_init__(self):
        flat = [i for fold in self.folds for i in fold]
        if len(flat) != len(set(flat)):
            raise DataError("folds overlap")
        sizes = [len(f) for f in self.folds]
        if max(sizes) - min(sizes) > 1:
            raise DataError(f"fold sizes unbalanced: {sizes}")


def partition_folds(n: int, k: int, seed: int) -> FoldPlan:
    """Shuffled partition of range(n) into k folds, sizes within one of each
    other, reproducible from the seed."""
    if k < 2:
        raise DataError("need at least two folds")
    if n < k:
        raise DataError(f"cannot split {n} samples into {k} folds")
    perm = Rng(seed).derive("folds").permutation(n)
    folds = [sorted(int(i) for i in perm[f::k]) for f in range(k)]
    return FoldPlan(k=k, folds=folds, seed=seed)


def fine_tune(m: net.Checkpoint, data: Dataset,
              config: tr.TrainConfig) -> net.Checkpoint:
    """Continue training from m's weights; m itself is never mutated."""
    tuned, _ = tr.train(m, data, config)
    return tuned


@dataclass
class TransferResult:
    plan: FoldPlan
    per_fold: List[M.MetricsReport]
    averaged: M.MetricsReport
    micro: M.MetricsReport
    fold_scores: List[np.ndarray]

    def pooled_scores(self, n: int) -> np.ndarray:
        """Reassemble per-sample scores in original dataset order."""
        out = np.zeros((n, 2))
        for fold, scores in zip(self.plan.folds, self.fold_scores):
            out[np.asarray(fold, dtype=np.int64)] = scores
        return out


def cross_domain_evaluate(m: net.Checkpoint, target: Dataset, k: int,
                          config: tr.TrainConfig,
                          subset: str = "all", arm: str = "") -> TransferResult:
    plan = partition_folds(len(target), k, config.seed)
    per_fold: List[M.MetricsReport] = []
    fold_scores: List[np.ndarray] = []
    pooled = M.ConfusionMatrix()
    for i, fold in enumerate(plan.folds):
        train_idx = sorted(set(range(len(target))) - set(fold))
        tuned = fine_tune(m, target.subset(train_idx, note=f"#fold{i}_train"), config)
        held_out = target.subset(fold, note=f"#fold{i}_eval")
        scores = tr.score_dataset(tuned, held_out, batch_size=config.batch_size)
        fold_scores.append(scores)
        cm = M.confusion(M.predict_labels(scores), held_out.labels())
        pooled = pooled + cm
        per_fold.append(M.metrics(cm, subset=subset, arm=f"{arm}/fold{i + 1}"))
    averaged = M.average_reports(per_fold, subset=subset, arm=arm)
    micro = M.metrics(pooled, subset=subset, arm=f"{arm}/micro" if arm else "micro")
    return TransferResult(plan=plan, per_fold=per_fold, averaged=averaged,
                          micro=micro, fold_scores=fold_scores)
