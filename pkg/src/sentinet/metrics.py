"""Confusion counts, precision/recall/F1/accuracy, report tables, exports.

The positive class is sentiment 1. A prediction is the argmax of the score
pair; an exact 0.5/0.5 tie goes to class 0 (lowest index), which matters for
accuracy on symmetric degenerate models and is pinned here.
"""

from __future__ import annotations

import csv
import io
import json
import math
import warnings
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .dataio import Dataset, save_image
from .errors import ConfigError, DataError
from .network import Checkpoint
from .tensor import Tensor


def predict_labels(scores: Tensor) -> np.ndarray:
    """Argmax of each score pair; ties resolve to class 0."""
    if scores.ndim != 2 or scores.shape[1] != 2:
        raise DataError(f"score matrix must be [N,2], got {scores.shape}")
    return np.argmax(scores, axis=1)


@dataclass
class ConfusionMatrix:
    tp: int = 0
    fp: int = 0
    tn: int = 0
    fn: int = 0

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn

    def __add__(self, other: "ConfusionMatrix") -> "ConfusionMatrix":
        return ConfusionMatrix(self.tp + other.tp, self.fp + other.fp,
                               self.tn + other.tn, self.fn + other.fn)


@dataclass
class MetricsReport:
    precision: Optional[float]
    recall: Optional[float]
    f1: Optional[float]
    accuracy: Optional[float]
    subset: str = "all"
    arm: str = ""

    def as_dict(self) -> dict:
        return {
            "arm": self.arm,
            "subset": self.subset,
            "precision": self.precision,
            "recall": self.recall,
            "f1": self.f1,
            "accuracy": self.accuracy,
        }


def confusion(predictions, labels) -> ConfusionMatrix:
    pred = np.asarray(predictions, dtype=np.int64)
    y = np.asarray(labels, dtype=np.int64)
    if pred.shape != y.shape or pred.ndim != 1 or pred.size == 0:
        raise DataError(f"predictions ({pred.shape}) and labels ({y.shape}) must "
                        f"be equal-length non-empty vectors")
    for arr, what in ((pred, "prediction"), (y, "label")):
        if not np.isin(arr, (0, 1)).all():
            raise DataError(f"{what}s must be binary")
    return ConfusionMatrix(
        tp=int(np.sum((pred == 1) & (y == 1))),
        fp=int(np.sum((pred == 1) & (y == 0))),
        tn=int(np.sum((pred == 0) & (y == 0))),
        fn=int(np.sum((pred == 0) & (y == 1))),
    )


def metrics(cm: ConfusionMatrix, subset: str = "all", arm: str = "") -> MetricsReport:
    if cm.total == 0:
        raise DataError("cannot compute metrics of an empty confusion matrix")
    precision = recall = f1 = None
    if cm.tp + cm.fp > 0:
        precision = cm.tp / (cm.tp + cm.fp)
    else:
        warnings.warn(f"{arm or 'report'}/{subset}: no positive predictions, "
                      f"precision undefined")
    if cm.tp + cm.fn > 0:
        recall = cm.tp / (cm.tp + cm.fn)
    else:
        warnings.warn(f"{arm or 'report'}/{subset}: no positive labels, "
                      f"recall undefined")
    if precision is not None and recall is not None and precision + recall > 0:
        f1 = 2.0 * precision * recall / (precision + recall)
    accuracy = (cm.tp + cm.tn) / cm.total
    return MetricsReport(precision, recall, f1, accuracy, subset=subset, arm=arm)


def evaluate_scores(scores: Tensor, labels, subset: str = "all",
                    arm: str = "") -> MetricsReport:
    return metrics(confusion(predict_labels(scores), labels), subset=subset, arm=arm)


def average_reports(reports: Sequence[MetricsReport], subset: str = "all",
                    arm: str = "") -> MetricsReport:
    """Arithmetic mean per metric; undefined (null) entries are skipped with
    a warning and do not pull the mean."""
    if not reports:
        raise DataError("cannot average an empty report list")

    def mean_of(name: str) -> Optional[float]:
        vals = [getattr(r, name) for r in reports if getattr(r, name) is not None]
        if len(vals) != len(reports):
            warnings.warn(f"{arm or 'average'}/{subset}: {name} undefined in "
                          f"{len(reports) - len(vals)} fold(s), excluded from the mean")
        if not vals:
            return None
        return float(np.mean(vals))

    return MetricsReport(mean_of("precision"), mean_of("recall"),
                         mean_of("f1"), mean_of("accuracy"),
                         subset=subset, arm=arm)


# ---------------------------------------------------------------------------
# Report emission (Tables 1/3/5 shape)

_COLUMNS = ("arm", "subset", "precision", "recall", "f1", "accuracy")


def _fmt3(v: Optional[float]) -> str:
    return "" if v is None else f"{v:.3f}"


def report_csv(reports: Sequence[MetricsReport]) -> str:
    if not reports:
        raise DataError("cannot emit an empty report")
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(_COLUMNS)
    for r in reports:
        writer.writerow([r.arm, r.subset, _fmt3(r.precision), _fmt3(r.recall),
                         _fmt3(r.f1), _fmt3(r.accuracy)])
    return buf.getvalue()


def report_json(reports: Sequence[MetricsReport]) -> str:
    if not reports:
        raise DataError("cannot emit an empty report")
    return json.dumps([r.as_dict() for r in reports], indent=2, sort_keys=True) + "\n"


def emit_report(reports: Sequence[MetricsReport], format: str, path) -> None:
    if format == "csv":
        text = report_csv(reports)
    elif format == "json":
        text = report_json(reports)
    else:
        raise ConfigError(f"unknown report format {format!r}")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(text)


def load_report_csv(path) -> List[MetricsReport]:
    with open(path, "r", encoding="utf-8", newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or tuple(rows[0]) != _COLUMNS:
        raise DataError(f"{path}: not a metrics report CSV")
    out = []
    for row in rows[1:]:
        arm, subset, *vals = row
        nums = [None if v == "" else float(v) for v in vals]
        out.append(MetricsReport(nums[0], nums[1], nums[2], nums[3],
                                 subset=subset, arm=arm))
    return out


def load_report_json(path) -> List[MetricsReport]:
    with open(path, "r", encoding="utf-8") as fh:
        data = json.load(fh)
    return [MetricsReport(d["precision"], d["recall"], d["f1"], d["accuracy"],
                          subset=d["subset"], arm=d["arm"]) for d in data]


# ---------------------------------------------------------------------------
# Ranked-example export


def rank_extremes(scores: Tensor, dataset: Dataset, n: int):
    """Top-n ids by positive score (descending) and by negative confidence
    (positive score ascending); ties order by id. Each entry carries the
    agreement flag against the stored label."""
    if n > len(dataset):
        raise DataError(f"asked for top {n} of {len(dataset)} samples")
    pred = predict_labels(scores)
    labels = dataset.labels()
    ids = dataset.ids()
    pos_score = scores[:, 1]
    order_pos = sorted(range(len(dataset)), key=lambda i: (-pos_score[i], ids[i]))
    order_neg = sorted(range(len(dataset)), key=lambda i: (pos_score[i], ids[i]))

    def entry(i: int) -> dict:
        return {"id": ids[i], "score": float(pos_score[i]),
                "agrees": bool(pred[i] == labels[i])}

    return [entry(i) for i in order_pos[:n]], [entry(i) for i in order_neg[:n]]


# ---------------------------------------------------------------------------
# First-layer filter grid


def _grid_layout(n: int) -> Tuple[int, int]:
    root = math.isqrt(n - 1) + 1  # ceil(sqrt(n))
    for cols in range(root, int(root * 1.5) + 1):
        if n % cols == 0:
            return cols, n // cols
    return root, (n + root - 1) // root


def export_filter_grid(c: Checkpoint, path, scale: int = 1) -> None:
    first = c.spec.layers[0] if c.spec.layers else {}
    if first.get("kind") != "conv":
        raise ConfigError("first layer is not convolutional; nothing to export")
    kernels = c.params[f"{first['name']}.weights"]  # [O, C, k, k]
    count, chans, k, _ = kernels.shape
    cols, rows = _grid_layout(count)

    tiles = np.zeros((count, 3, k, k))
    for i in range(count):
        ker = kernels[i]
        lo, hi = ker.min(), ker.max()
        norm = (ker - lo) / (hi - lo) if hi > lo else np.full_like(ker, 0.5)
        if chans == 3:
            tiles[i] = norm
        else:
            tiles[i] = norm.mean(axis=0, keepdims=True)

    ts = k * scale
    grid = np.zeros((3, rows * (ts + 1) + 1, cols * (ts + 1) + 1))
    for i in range(count):
        r, col = divmod(i, cols)
        tile = np.repeat(np.repeat(tiles[i], scale, axis=1), scale, axis=2)
        grid[:, r * (ts + 1) + 1:(r + 1) * (ts + 1),
             col * (ts + 1) + 1:(col + 1) * (ts + 1)] = tile
    save_image(path, grid)
