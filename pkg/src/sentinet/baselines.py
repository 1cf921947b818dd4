"""Low-level visual feature baselines and a linear sentiment classifier.

Features:

* GCH: 64-bin joint RGB histogram (4 levels per channel), normalized.
* LCH: the image cut into a 4x4 block grid (ceiling division), one 64-bin
  histogram per block, concatenated in row-major block order -> 1024 dims.
* BoW: dense gradient-orientation descriptors (4x4 cells x 8 orientation
  bins = 128 dims per patch, L2-normalized, clipped at 0.2, renormalized)
  quantized against a k-means codebook; the image becomes the normalized
  histogram of nearest-centroid assignments.

Combined arms ("GCH+BoW", "LCH+BoW") concatenate the parts, each keeping
its own normalization. The classifier on top is L2-regularized logistic
regression trained by plain gradient descent (convex, deterministic).
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .dataio import Dataset
from .errors import ConfigError, DataError, FormatError, ParameterError
from .tensor import FORMAT_F64, Rng, Tensor, load_tensor, save_tensor

GCH_BINS = 64
LCH_GRID = 4


def _check_rgb(image: Tensor) -> Tensor:
    if image.ndim != 3 or image.shape[0] != 3:
        raise FormatError(f"expected an RGB image [3,H,W], got {image.shape}")
    return image


def gch(image: Tensor) -> np.ndarray:
    """64-bin joint RGB histogram, each channel quantized to 4 levels."""
    _check_rgb(image)
    levels = np.minimum((image * 4.0).astype(np.int64), 3)
    joint = levels[0] * 16 + levels[1] * 4 + levels[2]
    counts = np.bincount(joint.ravel(), minlength=GCH_BINS).astype(np.float64)
    return counts / counts.sum()


def _block_edges(size: int) -> List[Tuple[int, int]]:
    step = -(-size // LCH_GRID)  # ceiling division
    return [(i * step, min((i + 1) * step, size)) for i in range(LCH_GRID)]


def lch(image: Tensor) -> np.ndarray:
    """16-block local color histogram: per-block GCH, row-major blocks."""
    _check_rgb(image)
    h, w = image.shape[1], image.shape[2]
    if h < LCH_GRID or w < LCH_GRID:
        raise FormatError(f"image {h}x{w} too small for a {LCH_GRID}x{LCH_GRID} grid")
    parts = []
    for r0, r1 in _block_edges(h):
        for c0, c1 in _block_edges(w):
            parts.append(gch(image[:, r0:r1, c0:c1]))
    return np.concatenate(parts)


# ---------------------------------------------------------------------------
# Dense gradient-orientation descriptors

DESCRIPTOR_CELLS = 4
DESCRIPTOR_BINS = 8
DESCRIPTOR_DIM = DESCRIPTOR_CELLS * DESCRIPTOR_CELLS * DESCRIPTOR_BINS
DESCRIPTOR_CLIP = 0.2
_NORM_EPS = 1e-12


def _grayscale(image: Tensor) -> np.ndarray:
    _check_rgb(image)
    return 0.299 * image[0] + 0.587 * image[1] + 0.114 * image[2]


def extract_descriptors(image: Tensor, grid_step: int = 4,
                        patch_size: int = 8) -> np.ndarray:
    """Dense descriptors on a regular grid; returns [count, 128]."""
    if grid_step < 1:
        raise ParameterError("grid_step must be positive")
    if patch_size < DESCRIPTOR_CELLS or patch_size % DESCRIPTOR_CELLS != 0:
        raise ParameterError(f"patch_size must be a positive multiple of "
                             f"{DESCRIPTOR_CELLS}")
    gray = _grayscale(image)
    h, w = gray.shape
    if patch_size > h or patch_size > w:
        raise FormatError(f"patch {patch_size} larger than image {h}x{w}")
    gy, gx = np.gradient(gray)
    mag = np.hypot(gx, gy)
    theta = np.mod(np.arctan2(gy, gx), 2.0 * np.pi)
    bins = np.minimum((theta / (2.0 * np.pi / DESCRIPTOR_BINS)).astype(np.int64),
                      DESCRIPTOR_BINS - 1)

    cell = patch_size // DESCRIPTOR_CELLS
    rows = range(0, h - patch_size + 1, grid_step)
    cols = range(0, w - patch_size + 1, grid_step)
    out = []
    for y in rows:
        for x in cols:
            desc = np.zeros((DESCRIPTOR_CELLS, DESCRIPTOR_CELLS, DESCRIPTOR_BINS))
            pb = bins[y:y + patch_size, x:x + patch_size]
            pm = mag[y:y + patch_size, x:x + patch_size]
            for cy in range(DESCRIPTOR_CELLS):
                for cx in range(DESCRIPTOR_CELLS):
                    cb = pb[cy * cell:(cy + 1) * cell, cx * cell:(cx + 1) * cell]
                    cw = pm[cy * cell:(cy + 1) * cell, cx * cell:(cx + 1) * cell]
                    desc[cy, cx] = np.bincount(cb.ravel(), weights=cw.ravel(),
                                               minlength=DESCRIPTOR_BINS)
            vec = desc.ravel()
            norm = np.linalg.norm(vec)
            if norm > _NORM_EPS:
                vec = np.minimum(vec / norm, DESCRIPTOR_CLIP)
                norm = np.linalg.norm(vec)
                if norm > _NORM_EPS:
                    vec = vec / norm
            out.append(vec)
    return np.asarray(out)


# ---------------------------------------------------------------------------
# Visual-word codebook (k-means with farthest-point seeding)


@dataclass
class Codebook:
    centroids: np.ndarray  # [k, dim]
    inertia: float
    seed: int
    grid_step: int = 4
    patch_size: int = 8

    @property
    def k(self) -> int:
        return self.centroids.shape[0]


def _assign(points: np.ndarray, centroids: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Nearest centroid per point (ties to the lowest index) and distances²."""
    d2 = (np.sum(points ** 2, axis=1)[:, None]
          + np.sum(centroids ** 2, axis=1)[None, :]
          - 2.0 * points @ centroids.T)
    np.maximum(d2, 0.0, out=d2)
    labels = np.argmin(d2, axis=1)
    return labels, d2[np.arange(points.shape[0]), labels]


def build_vocabulary(descriptors: np.ndarray, k: int, seed: int,
                     max_iters: int = 50, grid_step: int = 4,
                     patch_size: int = 8) -> Codebook:
    """Lloyd k-means. The first centroid is a seeded random point, the rest
    are farthest-point picks; iteration stops when assignments are stable."""
    pts = np.asarray(descriptors, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[0] < k:
        raise DataError(f"need at least {k} descriptors, got "
                        f"{pts.shape[0] if pts.ndim == 2 else 'non-matrix input'}")
    if k < 1:
        raise DataError("codebook size must be >= 1")
    rng = Rng(seed).derive("kmeans")
    first = int(rng.integers(0, pts.shape[0], 1)[0])
    chosen = [first]
    min_d2 = np.sum((pts - pts[first]) ** 2, axis=1)
    for _ in range(1, k):
        nxt = int(np.argmax(min_d2))
        chosen.append(nxt)
        min_d2 = np.minimum(min_d2, np.sum((pts - pts[nxt]) ** 2, axis=1))
    centroids = pts[chosen].copy()

    labels = np.full(pts.shape[0], -1)
    inertia = float("inf")
    for _ in range(max_iters):
        new_labels, d2 = _assign(pts, centroids)
        inertia = float(d2.sum())
        if np.array_equal(new_labels, labels):
            break
        labels = new_labels
        for j in range(k):
            members = pts[labels == j]
            if members.shape[0] > 0:
                centroids[j] = members.mean(axis=0)
    return Codebook(centroids=centroids, inertia=inertia, seed=seed,
                    grid_step=grid_step, patch_size=patch_size)


def bow(image: Tensor, codebook: Codebook) -> np.ndarray:
    """Histogram of nearest-centroid assignments, normalized to sum 1."""
    gray_shape = _check_rgb(image).shape
    if codebook.patch_size > gray_shape[1] or codebook.patch_size > gray_shape[2]:
        raise DataError(f"image {gray_shape[1]}x{gray_shape[2]} yields no "
                        f"descriptors for patch {codebook.patch_size}")
    descs = extract_descriptors(image, codebook.grid_step, codebook.patch_size)
    if descs.shape[0] == 0:
        raise DataError("image yields no descriptors")
    if descs.shape[1] != codebook.centroids.shape[1]:
        raise FormatError(f"descriptor dim {descs.shape[1]} != codebook dim "
                          f"{codebook.centroids.shape[1]}")
    labels, _ = _assign(descs, codebook.centroids)
    counts = np.bincount(labels, minlength=codebook.k).astype(np.float64)
    return counts / counts.sum()


def save_codebook(path_base: str, cb: Codebook) -> None:
    save_tensor(path_base + ".ntsr", cb.centroids, fmt=FORMAT_F64)
    sidecar = {"k": cb.k, "dim": int(cb.centroids.shape[1]),
               "inertia": cb.inertia, "seed": cb.seed,
               "grid_step": cb.grid_step, "patch_size": cb.patch_size}
    with open(path_base + ".json", "w", encoding="utf-8") as fh:
        json.dump(sidecar, fh, sort_keys=True, indent=2)
        fh.write("\n")


def load_codebook(path_base: str) -> Codebook:
    centroids = load_tensor(path_base + ".ntsr")
    with open(path_base + ".json", "r", encoding="utf-8") as fh:
        sidecar = json.load(fh)
    return Codebook(centroids=centroids, inertia=float(sidecar["inertia"]),
                    seed=int(sidecar["seed"]),
                    grid_step=int(sidecar["grid_step"]),
                    patch_size=int(sidecar["patch_size"]))


# ---------------------------------------------------------------------------
# Feature arms and the linear classifier

ARMS = ("GCH", "LCH", "BoW", "GCH+BoW", "LCH+BoW")


def extract_features(dataset: Dataset, arm: str,
                     codebook: Optional[Codebook] = None) -> np.ndarray:
    if arm not in ARMS:
        raise ConfigError(f"unknown feature arm {arm!r}; choose one of {ARMS}")
    parts = arm.split("+")
    rows = []
    for s in dataset:
        img = s.load_pixels()
        vecs = []
        for part in parts:
            if part == "GCH":
                vecs.append(gch(img))
            elif part == "LCH":
                vecs.append(lch(img))
            else:
                if codebook is None:
                    raise ConfigError(f"arm {arm!r} needs a codebook")
                vecs.append(bow(img, codebook))
        rows.append(np.concatenate(vecs))
    return np.asarray(rows)


def save_features_jsonl(path, ids: Sequence[str], extractor: Dict,
                        features: np.ndarray) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for sid, row in zip(ids, features):
            rec = {"id": sid, "extractor": extractor, "values": list(map(float, row))}
            fh.write(json.dumps(rec, sort_keys=True) + "\n")


@dataclass
class LinearModel:
    weights: np.ndarray  # [D]
    bias: float


@dataclass
class LinearConfig:
    learning_rate: float = 1.0
    l2: float = 1e-4
    max_iters: int = 3000
    tol: float = 1e-7

    def __post_init__(self):
        if self.learning_rate <= 0 or self.l2 < 0 or self.max_iters < 1:
            raise ConfigError("bad linear classifier configuration")


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def linear_objective_grad(model: LinearModel, features: np.ndarray,
                          labels: np.ndarray, l2: float):
    """Regularized NLL and its gradient (bias unregularized)."""
    z = features @ model.weights + model.bias
    p = _sigmoid(z)
    eps = 1e-12
    nll = -np.mean(labels * np.log(np.clip(p, eps, 1.0))
                   + (1 - labels) * np.log(np.clip(1.0 - p, eps, 1.0)))
    obj = nll + 0.5 * l2 * float(model.weights @ model.weights)
    resid = (p - labels) / labels.size
    grad_w = features.T @ resid + l2 * model.weights
    grad_b = float(resid.sum())
    return obj, grad_w, grad_b


def train_linear(features: np.ndarray, labels,
                 config: Optional[LinearConfig] = None) -> LinearModel:
    cfg = config or LinearConfig()
    X = np.asarray(features, dtype=np.float64)
    y = np.asarray(labels, dtype=np.int64)
    if X.ndim != 2 or X.shape[0] != y.size:
        raise DataError(f"feature matrix {X.shape} does not match {y.size} labels")
    if not np.isin(y, (0, 1)).all():
        raise DataError("labels must be binary")
    model = LinearModel(weights=np.zeros(X.shape[1]), bias=0.0)
    for _ in range(cfg.max_iters):
        _, gw, gb = linear_objective_grad(model, X, y, cfg.l2)
        model.weights -= cfg.learning_rate * gw
        model.bias -= cfg.learning_rate * gb
        if max(np.abs(gw).max(), abs(gb)) < cfg.tol:
            break
    return model


def predict_linear(model: LinearModel, features: np.ndarray) -> np.ndarray:
    X = np.asarray(features, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != model.weights.size:
        raise DataError(f"feature matrix {X.shape} does not match model "
                        f"dimension {model.weights.size}")
    p = _sigmoid(X @ model.weights + model.bias)
    return np.column_stack([1.0 - p, p])
