"""Declarative network assembly, batch forward/backward, checkpoint files.

A NetworkSpec is an ordered list of layer descriptors (plain dicts, so the
same structure round-trips through JSON and the CLI config). Shapes are
composed statically before any parameter is allocated; a bad stack fails
with the offending layer index.

Architecture families follow the iCONV-jFC naming: i conv blocks (conv ->
relu -> maxpool -> cross-channel norm) then j fully connected layers whose
widths end in 24 -> 2. Two profiles exist: "paper" (256x256 input, 96/256
kernels) and "desk" (32x32 input, small kernels, trains in minutes on CPU).

Checkpoint files: magic ``SNCK``, version byte, u32 JSON header length, a
JSON header (family, profile, iteration, RNG state, layer spec), then one
length-prefixed name + float64 tensor record per parameter and velocity
buffer. Float64 payloads keep save -> load exactly lossless.
"""

from __future__ import annotations

import copy
import json
import struct
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np

from . import layers as L
from .errors import CheckpointError, ConfigError, ShapeError
from .tensor import FORMAT_F64, Rng, Tensor, read_tensor, write_tensor

FAMILIES = ("3CONV-4FC", "3CONV-2FC", "2CONV-3FC", "2CONV-4FC")

CHECKPOINT_MAGIC = b"SNCK"
CHECKPOINT_VERSION = 1

PROFILES = {
    "paper": {
        "input": (3, 256, 256),
        "convs": [(96, 11, 4), (256, 5, 2), (384, 3, 1)],
        "pool": (3, 2),
        "hidden": 512,
    },
    "desk": {
        "input": (3, 32, 32),
        "convs": [(16, 5, 1), (32, 5, 1), (32, 3, 1)],
        "pool": (2, 2),
        "hidden": 64,
    },
}


@dataclass
class NetworkSpec:
    family: str
    profile: str
    input_shape: Tuple[int, int, int]  # (C, H, W)
    layers: List[dict]
    class_count: int = 2

    def to_dict(self) -> dict:
        return {
            "family": self.family,
            "profile": self.profile,
            "input_shape": list(self.input_shape),
            "class_count": self.class_count,
            "layers": self.layers,
        }

    @staticmethod
    def from_dict(d: dict) -> "NetworkSpec":
        return NetworkSpec(
            family=d["family"],
            profile=d["profile"],
            input_shape=tuple(d["input_shape"]),
            layers=list(d["layers"]),
            class_count=int(d.get("class_count", 2)),
        )


def parameter_shapes(spec: NetworkSpec) -> Dict[str, Tuple[int, ...]]:
    """Walk the layer stack, check composition, and return parameter shapes.

    Raises ShapeError naming the first layer whose geometry does not compose.
    """
    shapes: Dict[str, Tuple[int, ...]] = {}
    c, h, w = spec.input_shape
    flat: Optional[int] = None
    last_fc_out = None
    for idx, ly in enumerate(spec.layers):
        kind = ly["kind"]
        try:
            if kind == "conv":
                if flat is not None:
                    raise ShapeError("conv after flatten")
                k, s, pad = ly["kernel"], ly["stride"], ly.get("padding", 0)
                h = L.conv_output_size(h, k, s, pad)
                w = L.conv_output_size(w, k, s, pad)
                shapes[f"{ly['name']}.weights"] = (ly["out"], c, k, k)
                shapes[f"{ly['name']}.bias"] = (ly["out"],)
                c = ly["out"]
            elif kind == "pool":
                if flat is not None:
                    raise ShapeError("pool after flatten")
                win, s = ly["window"], ly["stride"]
                if win > h or win > w:
                    raise ShapeError(f"pool window {win} exceeds {h}x{w}")
                h = (h - win) // s + 1
                w = (w - win) // s + 1
            elif kind in ("relu", "lrn"):
                pass
            elif kind == "flatten":
                flat = c * h * w
            elif kind == "fc":
                if flat is None:
                    raise ShapeError("fc before flatten")
                shapes[f"{ly['name']}.weights"] = (flat, ly["out"])
                shapes[f"{ly['name']}.bias"] = (ly["out"],)
                flat = ly["out"]
                last_fc_out = ly["out"]
            else:
                raise ShapeError(f"unknown layer kind {kind!r}")
        except ShapeError as exc:
            raise ShapeError(f"layer {idx} ({kind}): {exc}") from exc
    if last_fc_out != spec.class_count:
        raise ShapeError(f"network must end in a fully connected layer with "
                         f"{spec.class_count} outputs, got {last_fc_out}")
    return shapes


def _conv_block(name: str, out: int, kernel: int, stride: int,
                pool: Tuple[int, int]) -> List[dict]:
    return [
        {"kind": "conv", "name": name, "out": out, "kernel": kernel,
         "stride": stride, "padding": 0},
        {"kind": "relu"},
        {"kind": "pool", "window": pool[0], "stride": pool[1]},
        {"kind": "lrn", "depth": 5, "alpha": 1e-4, "beta": 0.75, "k_offset": 2.0},
    ]


def family_spec(family: str, profile: str) -> NetworkSpec:
    if family not in FAMILIES:
        raise ConfigError(f"unknown architecture family {family!r}; "
                          f"choose one of {', '.join(FAMILIES)}")
    if profile not in PROFILES:
        raise ConfigError(f"unknown profile {profile!r}; choose paper or desk")
    prof = PROFILES[profile]
    n_conv = int(family[0])
    n_fc = int(family[-3])
    stack: List[dict] = []
    for i in range(n_conv):
        out, k, s = prof["convs"][i]
        stack.extend(_conv_block(f"conv{i + 1}", out, k, s, prof["pool"]))
    stack.append({"kind": "flatten"})
    widths = [prof["hidden"]] * (n_fc - 2) + [24, 2]
    for j, width in enumerate(widths):
        stack.append({"kind": "fc", "name": f"fc{j + 1}", "out": width})
        if j < len(widths) - 1:
            stack.append({"kind": "relu"})
    return NetworkSpec(family=family, profile=profile,
                       input_shape=prof["input"], layers=stack)


@dataclass
class Checkpoint:
    spec: NetworkSpec
    params: Dict[str, Tensor]
    velocity: Dict[str, Tensor]
    rng: Rng
    iteration: int = 0

    def clone(self) -> "Checkpoint":
        return Checkpoint(
            spec=copy.deepcopy(self.spec),
            params={k: v.copy() for k, v in self.params.items()},
            velocity={k: v.copy() for k, v in self.velocity.items()},
            rng=Rng.from_state(self.rng.state()),
            iteration=self.iteration,
        )


def init_checkpoint(spec: NetworkSpec, rng: Rng) -> Checkpoint:
    """Allocate parameters: zero-mean Gaussians at sqrt(2 / fan_in), zero bias."""
    shapes = parameter_shapes(spec)
    params: Dict[str, Tensor] = {}
    velocity: Dict[str, Tensor] = {}
    for name in shapes:
        shape = shapes[name]
        if name.endswith(".bias"):
            params[name] = np.zeros(shape, dtype=np.float64)
        else:
            fan_in = int(np.prod(shape[1:])) if len(shape) == 4 else shape[0]
            params[name] = rng.normal(shape, scale=np.sqrt(2.0 / fan_in))
        velocity[name] = np.zeros(shape, dtype=np.float64)
    return Checkpoint(spec=spec, params=params, velocity=velocity, rng=rng)


def build_architecture(family: str, profile: str, rng: Rng) -> Checkpoint:
    return init_checkpoint(family_spec(family, profile), rng)


# ---------------------------------------------------------------------------
# Forward / backward over a layer stack


def softmax_scores(logits: Tensor) -> Tensor:
    """Row-wise two-class softmax with max subtraction."""
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def forward_logits(c: Checkpoint, batch: Tensor, keep_caches: bool = False):
    """Run the stack on [N,C,H,W]; optionally keep per-layer caches for backward."""
    if batch.ndim != 4 or tuple(batch.shape[1:]) != tuple(c.spec.input_shape):
        raise ShapeError(f"batch geometry {batch.shape[1:]} does not match "
                         f"network input {c.spec.input_shape}")
    x = batch.astype(np.float64, copy=False)
    caches = [] if keep_caches else None
    for ly in c.spec.layers:
        kind = ly["kind"]
        if kind == "conv":
            p = L.ConvParams(ly["out"], ly["kernel"], ly["stride"],
                             ly.get("padding", 0),
                             c.params[f"{ly['name']}.weights"],
                             c.params[f"{ly['name']}.bias"])
            if keep_caches:
                out, cols = L.conv2d_forward(x, p, return_cols=True)
                caches.append(("conv", x, p, ly["name"], cols))
            else:
                out = L.conv2d_forward(x, p)
        elif kind == "relu":
            out = L.relu_forward(x)
            if keep_caches:
                caches.append(("relu", x))
        elif kind == "pool":
            out, idx = L.maxpool_forward(x, ly["window"], ly["stride"])
            if keep_caches:
                caches.append(("pool", idx))
        elif kind == "lrn":
            p = L.LrnParams(ly["depth"], ly["alpha"], ly["beta"], ly["k_offset"])
            out = L.lrn_forward(x, p)
            if keep_caches:
                caches.append(("lrn", x, p))
        elif kind == "flatten":
            out = x.reshape(x.shape[0], -1)
            if keep_caches:
                caches.append(("flatten", x.shape))
        elif kind == "fc":
            w = c.params[f"{ly['name']}.weights"]
            b = c.params[f"{ly['name']}.bias"]
            out = L.fc_forward(x, w, b)
            if keep_caches:
                caches.append(("fc", x, w, ly["name"]))
        else:
            raise ShapeError(f"unknown layer kind {kind!r}")
        x = out
    return (x, caches) if keep_caches else (x, None)


def backward(c: Checkpoint, caches, logit_grad: Tensor) -> Dict[str, Tensor]:
    """Backpropagate d(loss)/d(logits) through the cached stack."""
    grads: Dict[str, Tensor] = {}
    g = logit_grad
    for cache in reversed(caches):
        kind = cache[0]
        if kind == "conv":
            _, x, p, name, cols = cache
            lg = L.conv2d_backward(x, p, g, cols=cols)
            grads[f"{name}.weights"] = lg.parameter_grads["weights"]
            grads[f"{name}.bias"] = lg.parameter_grads["bias"]
            g = lg.input_grad
        elif kind == "relu":
            g = L.relu_backward(cache[1], g)
        elif kind == "pool":
            g = L.maxpool_backward(cache[1], g)
        elif kind == "lrn":
            g = L.lrn_backward(cache[1], cache[2], g)
        elif kind == "flatten":
            g = g.reshape(cache[1])
        elif kind == "fc":
            _, x, w, name = cache
            lg = L.fc_backward(x, w, g)
            grads[f"{name}.weights"] = lg.parameter_grads["weights"]
            grads[f"{name}.bias"] = lg.parameter_grads["bias"]
            g = lg.input_grad
    return grads


def forward(c: Checkpoint, batch: Tensor) -> Tensor:
    """Class probabilities [N, 2] for a batch; rows sum to one."""
    logits, _ = forward_logits(c, batch)
    return softmax_scores(logits)


# ---------------------------------------------------------------------------
# Checkpoint serialization


def save_checkpoint(c: Checkpoint, path) -> None:
    names = list(c.params.keys())
    header = {
        "format": CHECKPOINT_VERSION,
        "family": c.spec.family,
        "profile": c.spec.profile,
        "iteration": c.iteration,
        "rng": c.rng.state(),
        "spec": c.spec.to_dict(),
        "tensors": names + [f"velocity:{n}" for n in names],
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<B", CHECKPOINT_VERSION))
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        for name in header["tensors"]:
            arr = (c.velocity[name[len("velocity:"):]]
                   if name.startswith("velocity:") else c.params[name])
            raw = name.encode("utf-8")
            fh.write(struct.pack("<I", len(raw)))
            fh.write(raw)
            write_tensor(fh, arr, FORMAT_F64)


def load_checkpoint(path) -> Checkpoint:
    try:
        with open(path, "rb") as fh:
            magic = fh.read(4)
            if magic != CHECKPOINT_MAGIC:
                raise CheckpointError(f"{path}: bad checkpoint magic {magic!r}")
            version = fh.read(1)
            if len(version) != 1 or version[0] != CHECKPOINT_VERSION:
                raise CheckpointError(f"{path}: unsupported checkpoint version "
                                      f"{version!r}")
            raw = fh.read(4)
            if len(raw) != 4:
                raise CheckpointError(f"{path}: truncated header")
            hlen = struct.unpack("<I", raw)[0]
            blob = fh.read(hlen)
            if len(blob) != hlen:
                raise CheckpointError(f"{path}: truncated header")
            try:
                header = json.loads(blob.decode("utf-8"))
            except (UnicodeDecodeError, json.JSONDecodeError) as exc:
                raise CheckpointError(f"{path}: corrupt header: {exc}") from exc
            spec = NetworkSpec.from_dict(header["spec"])
            tensors: Dict[str, Tensor] = {}
            for name in header["tensors"]:
                raw = fh.read(4)
                if len(raw) != 4:
                    raise CheckpointError(f"{path}: truncated at record {name!r}")
                nlen = struct.unpack("<I", raw)[0]
                got = fh.read(nlen).decode("utf-8")
                if got != name:
                    raise CheckpointError(f"{path}: record order mismatch "
                                          f"({got!r} != {name!r})")
                try:
                    tensors[name] = read_tensor(fh)
                except Exception as exc:
                    raise CheckpointError(f"{path}: corrupt tensor {name!r}: "
                                          f"{exc}") from exc
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc

    expected = parameter_shapes(spec)
    params: Dict[str, Tensor] = {}
    velocity: Dict[str, Tensor] = {}
    for name, shape in expected.items():
        if name not in tensors or f"velocity:{name}" not in tensors:
            raise CheckpointError(f"{path}: missing tensor {name!r}")
        if tensors[name].shape != shape:
            raise CheckpointError(f"{path}: tensor {name!r} has shape "
                                  f"{tensors[name].shape}, spec wants {shape}")
        params[name] = tensors[name]
        velocity[name] = tensors[f"velocity:{name}"]
    return Checkpoint(spec=spec, params=params, velocity=velocity,
                      rng=Rng.from_state(header["rng"]),
                      iteration=int(header["iteration"]))
