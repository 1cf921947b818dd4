"""Image decoding, preprocessing, dataset manifests, and synthetic corpora.

Images travel as float64 tensors shaped [3, H, W] with values in [0, 1].
The only file format is binary PPM (P6): bit-exact, dependency-free, and
trivial to verify byte-for-byte. Datasets are JSON-lines manifests, one
sample per line.

The synthetic generator plants two weak class signals in each image:

* a global color tint (positive class pulls red up / blue down, negative
  class the opposite), masked by a per-image random color cast, and
* a pair of sinusoidal gratings whose vertical/horizontal amplitude
  difference carries the class, masked by per-image amplitude jitter.

Color histograms can only see the first signal, orientation descriptors
only the second; a CNN sees both. Per-pixel noise sits on top, and labels
are flipped independently with the configured noise rate, with the clean
label kept alongside so experiments can measure noise effects.
"""

from __future__ import annotations

import hashlib
import json
import math
import os
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .errors import DataError, FormatError, LabelError, ParseError
from .tensor import Rng, Tensor


# ---------------------------------------------------------------------------
# PPM (P6) codec


def load_image(path) -> Tensor:
    """Decode a binary PPM file into a [3, H, W] tensor scaled to [0, 1]."""
    try:
        with open(path, "rb") as fh:
            data = fh.read()
    except OSError as exc:
        raise FormatError(f"cannot read image {path}: {exc}") from exc
    return decode_ppm(data, name=str(path))


def decode_ppm(data: bytes, name: str = "<bytes>") -> Tensor:
    if data[:2] != b"P6":
        raise FormatError(f"{name}: not a binary PPM (P6) file")
    pos = 2
    fields: List[int] = []
    while len(fields) < 3:
        if pos >= len(data):
            raise FormatError(f"{name}: truncated PPM header")
        ch = data[pos:pos + 1]
        if ch == b"#":
            end = data.find(b"\n", pos)
            pos = len(data) if end < 0 else end + 1
        elif ch.isspace():
            pos += 1
        elif ch.isdigit():
            start = pos
            while pos < len(data) and data[pos:pos + 1].isdigit():
                pos += 1
            fields.append(int(data[start:pos]))
        else:
            raise FormatError(f"{name}: bad PPM header byte {ch!r}")
    width, height, maxval = fields
    if maxval < 1 or maxval > 255:
        raise FormatError(f"{name}: unsupported PPM maxval {maxval}")
    pos += 1  # single whitespace separating header and payload
    expected = width * height * 3
    payload = data[pos:pos + expected]
    if len(payload) != expected:
        raise FormatError(f"{name}: truncated PPM payload "
                          f"({len(payload)} of {expected} bytes)")
    arr = np.frombuffer(payload, dtype=np.uint8).reshape(height, width, 3)
    return arr.transpose(2, 0, 1).astype(np.float64) / float(maxval)


def encode_ppm(image: Tensor) -> bytes:
    if image.ndim != 3 or image.shape[0] != 3:
        raise FormatError(f"PPM encoder expects [3,H,W], got {image.shape}")
    h, w = image.shape[1], image.shape[2]
    quant = np.clip(np.floor(image * 255.0 + 0.5), 0, 255).astype(np.uint8)
    header = f"P6\n{w} {h}\n255\n".encode("ascii")
    return header + quant.transpose(1, 2, 0).tobytes()


def save_image(path, image: Tensor) -> None:
    with open(path, "wb") as fh:
        fh.write(encode_ppm(image))


# ---------------------------------------------------------------------------
# Preprocessing


def _bilinear_resize(image: Tensor, out_h: int, out_w: int) -> Tensor:
    c, h, w = image.shape
    if (out_h, out_w) == (h, w):
        return image
    ys = np.clip((np.arange(out_h) + 0.5) * (h / out_h) - 0.5, 0.0, h - 1.0)
    xs = np.clip((np.arange(out_w) + 0.5) * (w / out_w) - 0.5, 0.0, w - 1.0)
    y0 = np.floor(ys).astype(int)
    x0 = np.floor(xs).astype(int)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    wy = (ys - y0)[None, :, None]
    wx = (xs - x0)[None, None, :]
    top = image[:, y0][:, :, x0] * (1 - wx) + image[:, y0][:, :, x1] * wx
    bot = image[:, y1][:, :, x0] * (1 - wx) + image[:, y1][:, :, x1] * wx
    return top * (1 - wy) + bot * wy


def resize_center_crop(image: Tensor, side: int) -> Tensor:
    """Resize the shorter dimension to ``side`` (bilinear, aspect kept),
    then crop the centered side-by-side square (floor offsets)."""
    if image.ndim != 3 or image.shape[0] != 3:
        raise FormatError(f"expected [3,H,W] image, got {image.shape}")
    c, h, w = image.shape
    short = min(h, w)
    if short != side:
        scale = side / short
        new_h = side if h == short else int(math.floor(h * scale + 0.5))
        new_w = side if w == short else int(math.floor(w * scale + 0.5))
        image = _bilinear_resize(image, new_h, new_w)
        h, w = new_h, new_w
    top = (h - side) // 2
    left = (w - side) // 2
    return image[:, top:top + side, left:left + side]


# ---------------------------------------------------------------------------
# Samples, datasets, manifests


@dataclass
class Sample:
    id: str
    pixels: Optional[Tensor] = None
    path: Optional[str] = None
    label: Optional[int] = None
    worker_labels: Optional[List[int]] = None
    true_label: Optional[int] = None

    def load_pixels(self) -> Tensor:
        if self.pixels is not None:
            return self.pixels
        if self.path is None:
            raise DataError(f"sample {self.id} has neither pixels nor a path")
        self.pixels = load_image(self.path)
        return self.pixels


class Dataset:
    """Ordered list of samples plus a provenance note."""

    def __init__(self, samples: Sequence[Sample], provenance: str = ""):
        ids = [s.id for s in samples]
        if len(set(ids)) != len(ids):
            dup = next(i for i in ids if ids.count(i) > 1)
            raise DataError(f"duplicate sample id {dup!r}")
        self.samples = list(samples)
        self.provenance = provenance

    def __len__(self) -> int:
        return len(self.samples)

    def __iter__(self):
        return iter(self.samples)

    def ids(self) -> List[str]:
        return [s.id for s in self.samples]

    def labels(self) -> np.ndarray:
        out = []
        for s in self.samples:
            if s.label is None:
                raise LabelError(f"sample {s.id} is unlabeled")
            if s.label not in (0, 1):
                raise LabelError(f"sample {s.id} has label {s.label}, want 0 or 1")
            out.append(s.label)
        return np.asarray(out, dtype=np.int64)

    def true_labels(self) -> np.ndarray:
        return np.asarray(
            [s.label if s.true_label is None else s.true_label for s in self.samples],
            dtype=np.int64)

    def batch(self, indices: Sequence[int], side: Optional[int] = None) -> Tensor:
        """Stack pixels for the given sample indices into [N, 3, H, W]."""
        imgs = []
        for i in indices:
            img = self.samples[i].load_pixels()
            if side is not None and (img.shape[1] != side or img.shape[2] != side):
                img = resize_center_crop(img, side)
            imgs.append(img)
        if not imgs:
            raise DataError("empty batch")
        shapes = {im.shape for im in imgs}
        if len(shapes) != 1:
            raise DataError(f"batch mixes image shapes {sorted(shapes)}")
        return np.stack(imgs)

    def subset(self, indices: Sequence[int], note: str = "") -> "Dataset":
        samples = [self.samples[i] for i in indices]
        return Dataset(samples, provenance=self.provenance + note)


def load_manifest(path) -> Dataset:
    base = os.path.dirname(os.path.abspath(path))
    samples = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(f"{path}:{lineno}: invalid JSON: {exc}") from exc
            if not isinstance(rec, dict) or "id" not in rec:
                raise ParseError(f"{path}:{lineno}: manifest line needs an 'id'")
            label = rec.get("label")
            unlabeled = bool(rec.get("unlabeled", False))
            if label is None and not unlabeled:
                raise ParseError(f"{path}:{lineno}: missing label on a sample "
                                 f"not flagged unlabeled")
            if label is not None and label not in (0, 1):
                raise ParseError(f"{path}:{lineno}: label {label!r} outside {{0,1}}")
            wl = rec.get("worker_labels")
            if wl is not None:
                if len(wl) != 5 or any(v not in (0, 1) for v in wl):
                    raise ParseError(f"{path}:{lineno}: worker_labels must be "
                                     f"five values in {{0,1}}")
            tl = rec.get("true_label")
            if tl is not None and tl not in (0, 1):
                raise ParseError(f"{path}:{lineno}: true_label {tl!r} outside {{0,1}}")
            spath = rec.get("path")
            if spath is not None and not os.path.isabs(spath):
                spath = os.path.join(base, spath)
            samples.append(Sample(id=str(rec["id"]), path=spath, label=label,
                                  worker_labels=list(wl) if wl else None,
                                  true_label=tl))
    return Dataset(samples, provenance=str(path))


def save_manifest(dataset: Dataset, path, relative_to: Optional[str] = None) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for s in dataset.samples:
            rec: Dict = {"id": s.id}
            if s.path is not None:
                p = s.path
                if relative_to is not None:
                    p = os.path.relpath(p, relative_to)
                rec["path"] = p
            if s.label is None:
                rec["unlabeled"] = True
            else:
                rec["label"] = int(s.label)
            if s.worker_labels is not None:
                rec["worker_labels"] = [int(v) for v in s.worker_labels]
            if s.true_label is not None:
                rec["true_label"] = int(s.true_label)
            fh.write(json.dumps(rec, sort_keys=True) + "\n")


# ---------------------------------------------------------------------------
# Crowd-vote aggregation


def aggregate_worker_labels(dataset: Dataset) -> Tuple[Dataset, Dataset, Dataset]:
    """Split by worker agreement into (five_agree, at_least_four, at_least_three).

    With five binary votes a 3-2 majority always exists, so the last subset
    contains every fully voted sample; the three are nested. Each returned
    sample carries the majority label.
    """
    five, four, three = [], [], []
    for s in dataset.samples:
        if s.worker_labels is None or len(s.worker_labels) != 5:
            raise DataError(f"sample {s.id} lacks the 5 worker votes")
        pos = sum(1 for v in s.worker_labels if v == 1)
        majority = 1 if pos >= 3 else 0
        agree = max(pos, 5 - pos)
        labeled = replace(s, label=majority)
        three.append(labeled)
        if agree >= 4:
            four.append(labeled)
        if agree == 5:
            five.append(labeled)
    note = dataset.provenance
    return (Dataset(five, note + "#five_agree"),
            Dataset(four, note + "#at_least_four"),
            Dataset(three, note + "#at_least_three"))


# ---------------------------------------------------------------------------
# Synthetic noisy-label corpus

# Fixed nuisance scales; the SyntheticConfig strength knob moves the class
# signal relative to these. Calibrated so strength 0.8 puts the clean-label
# ceiling near 0.95 on 32x32 images.
CAST_SIGMA = 0.10       # per-image color cast, shared by all pixels
TEXTURE_SIGMA = 0.12    # per-image grating amplitude jitter
PIXEL_SIGMA = 0.08      # iid pixel noise
COLOR_GAIN = 0.10       # tint amplitude at strength 1
TEXTURE_GAIN = 0.175    # grating amplitude difference at strength 1
GRATING_TOTAL = 0.22    # a_vertical + a_horizontal
GRATING_PERIOD = 8      # pixels per cycle


@dataclass
class SyntheticConfig:
    count: int = 2000
    side: int = 32
    signal: float = 0.8
    noise_rate: float = 0.25
    seed: int = 0
    channel_offset: Tuple[float, float, float] = (0.0, 0.0, 0.0)
    tint_flip: bool = False

    def __post_init__(self):
        if self.count < 1:
            raise DataError("synthetic corpus needs at least one sample")
        if self.side < GRATING_PERIOD:
            raise DataError(f"image side must be >= {GRATING_PERIOD}")
        if not 0.0 <= self.signal <= 1.0:
            raise DataError("signal strength must lie in [0, 1]")
        if not 0.0 <= self.noise_rate < 0.5:
            raise DataError("label-noise rate must lie in [0, 0.5)")

    def config_hash(self) -> str:
        blob = json.dumps(self.__dict__, sort_keys=True, default=list)
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


def generate_synthetic(config: SyntheticConfig) -> Dataset:
    rng = Rng(config.seed).derive("synth")
    n, side = config.count, config.side
    true_labels = (rng.uniform([n]) < 0.5).astype(np.int64)
    flips = rng.uniform([n]) < config.noise_rate
    labels = np.where(flips, 1 - true_labels, true_labels)

    coords = np.arange(side) * (2.0 * np.pi / GRATING_PERIOD)
    tint_dir = np.array([-1.0, 0.0, 1.0]) if config.tint_flip else np.array([1.0, 0.0, -1.0])
    offset = np.asarray(config.channel_offset, dtype=np.float64)

    samples = []
    for i in range(n):
        sign = 1.0 if true_labels[i] == 1 else -1.0
        cast = rng.normal([3], CAST_SIGMA)
        phase_v, phase_h = rng.uniform([2]) * 2.0 * np.pi
        diff = sign * config.signal * TEXTURE_GAIN + float(rng.normal([1], TEXTURE_SIGMA)[0])
        diff = float(np.clip(diff, -GRATING_TOTAL, GRATING_TOTAL))
        amp_v = (GRATING_TOTAL + diff) / 2.0
        amp_h = (GRATING_TOTAL - diff) / 2.0
        grating = (amp_v * np.sin(coords[None, :] + phase_v)
                   + amp_h * np.sin(coords[:, None] + phase_h))
        tint = sign * config.signal * COLOR_GAIN * tint_dir
        img = 0.5 + (tint + cast + offset)[:, None, None] + grating[None, :, :]
        img = img + rng.normal([3, side, side], PIXEL_SIGMA)
        img = np.clip(img, 0.0, 1.0)
        samples.append(Sample(id=f"s{i:05d}", pixels=img,
                              label=int(labels[i]), true_label=int(true_labels[i])))
    return Dataset(samples, provenance=f"synthetic:{config.config_hash()}")


def write_corpus(dataset: Dataset, out_dir) -> str:
    """Write every sample as a PPM plus a manifest.jsonl; returns manifest path."""
    os.makedirs(out_dir, exist_ok=True)
    img_dir = os.path.join(out_dir, "images")
    os.makedirs(img_dir, exist_ok=True)
    on_disk = []
    for s in dataset.samples:
        rel = os.path.join("images", f"{s.id}.ppm")
        save_image(os.path.join(out_dir, rel), s.load_pixels())
        on_disk.append(replace(s, pixels=None, path=os.path.join(out_dir, rel)))
    manifest = os.path.join(out_dir, "manifest.jsonl")
    save_manifest(Dataset(on_disk, dataset.provenance), manifest, relative_to=out_dir)
    return manifest
