"""Dense tensor values, deterministic RNG streams, and the binary tensor format.

Tensors are plain numpy float64 arrays in row-major (C) order. Everything
downstream (layers, training, features) works on these values; float32
appears only inside serialized files.

Binary format: magic ``NTSR``, one version byte (1 = float32 payload,
2 = float64 payload), rank as u32 little-endian, each dimension as u32
little-endian, then the payload in row-major order.
"""

from __future__ import annotations

import struct
from typing import BinaryIO, Callable, Sequence, Union

import numpy as np

from .errors import FormatError, ShapeError

Tensor = np.ndarray

MAGIC = b"NTSR"
FORMAT_F32 = 1
FORMAT_F64 = 2
_DTYPES = {FORMAT_F32: np.dtype("<f4"), FORMAT_F64: np.dtype("<f8")}


class Rng:
    """Seeded deterministic generator (PCG64) with named substreams.

    The same 64-bit seed yields the same stream on every platform.
    ``derive`` builds an independent stream from (seed, label) so that,
    e.g., filter draws never perturb shuffle draws.
    """

    def __init__(self, seed: int):
        self.seed = int(seed) & 0xFFFFFFFFFFFFFFFF
        self._gen = np.random.Generator(np.random.PCG64(self.seed))

    def derive(self, label: str) -> "Rng":
        tag = int.from_bytes(label.encode("utf-8").ljust(8, b"\0")[:8], "little")
        child = Rng.__new__(Rng)
        child.seed = self.seed
        child._gen = np.random.Generator(
            np.random.PCG64(np.random.SeedSequence(entropy=[self.seed, tag]))
        )
        return child

    def normal(self, shape: Sequence[int], scale: float = 1.0) -> Tensor:
        return self._gen.normal(0.0, scale, size=tuple(shape))

    def uniform(self, shape: Sequence[int]) -> Tensor:
        return self._gen.random(size=tuple(shape))

    def integers(self, low: int, high: int, count: int) -> np.ndarray:
        return self._gen.integers(low, high, size=count)

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)

    def state(self) -> dict:
        st = self._gen.bit_generator.state
        return {
            "seed": self.seed,
            "state": str(st["state"]["state"]),
            "inc": str(st["state"]["inc"]),
            "has_uint32": int(st["has_uint32"]),
            "uinteger": int(st["uinteger"]),
        }

    @staticmethod
    def from_state(payload: dict) -> "Rng":
        rng = Rng(int(payload["seed"]))
        rng._gen.bit_generator.state = {
            "bit_generator": "PCG64",
            "state": {"state": int(payload["state"]), "inc": int(payload["inc"])},
            "has_uint32": int(payload["has_uint32"]),
            "uinteger": int(payload["uinteger"]),
        }
        return rng


def counter_uniform(seed: int, index: int) -> float:
    """Order-independent uniform in [0, 1) keyed by (seed, index).

    Counter-based: sample i gets the same draw no matter how many other
    samples are processed or in what order.
    """
    words = np.random.SeedSequence(entropy=[int(seed) & 0xFFFFFFFFFFFFFFFF, int(index)]).generate_state(2, np.uint32)
    value = (int(words[0]) << 32) | int(words[1])
    return value / 2.0**64


def _check_shape(shape: Sequence[int]) -> tuple:
    dims = tuple(int(d) for d in shape)
    if len(dims) == 0:
        raise ShapeError("tensor shape must have at least one dimension")
    for d in dims:
        if d < 1:
            raise ShapeError(f"invalid tensor shape {dims}: dimensions must be >= 1")
    return dims


def tensor_new(shape: Sequence[int], fill: Union[float, Rng, Callable] = 0.0) -> Tensor:
    """Fresh tensor of the given shape.

    ``fill`` is a constant, an Rng (standard-normal draws), or a callable
    taking the shape tuple.
    """
    dims = _check_shape(shape)
    if isinstance(fill, Rng):
        return np.ascontiguousarray(fill.normal(dims), dtype=np.float64)
    if callable(fill):
        out = np.ascontiguousarray(fill(dims), dtype=np.float64)
        if out.shape != dims:
            raise ShapeError(f"fill callable produced shape {out.shape}, wanted {dims}")
        return out
    return np.full(dims, float(fill), dtype=np.float64)


def reshape(t: Tensor, shape: Sequence[int]) -> Tensor:
    dims = _check_shape(shape)
    if int(np.prod(dims)) != t.size:
        raise ShapeError(f"cannot reshape {t.shape} ({t.size} elements) to {dims}")
    return np.reshape(t, dims)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError(f"matmul needs rank-2 operands, got {a.ndim} and {b.ndim}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul inner dimensions differ: {a.shape} x {b.shape}")
    return a @ b


def reduce(t: Tensor, op: str, axis: int) -> Tensor:
    """Remove ``axis`` by sum, max, or argmax (ties to the lowest index)."""
    if not -t.ndim <= axis < t.ndim:
        raise ShapeError(f"axis {axis} out of range for rank {t.ndim}")
    if op == "sum":
        return np.sum(t, axis=axis)
    if op == "max":
        return np.max(t, axis=axis)
    if op == "argmax":
        return np.argmax(t, axis=axis)
    raise ShapeError(f"unknown reduce op {op!r}")


def write_tensor(stream: BinaryIO, t: Tensor, fmt: int = FORMAT_F32) -> None:
    if fmt not in _DTYPES:
        raise FormatError(f"unknown tensor format version {fmt}")
    arr = np.ascontiguousarray(t, dtype=_DTYPES[fmt])
    stream.write(MAGIC)
    stream.write(struct.pack("<B", fmt))
    stream.write(struct.pack("<I", arr.ndim))
    for d in arr.shape:
        stream.write(struct.pack("<I", d))
    stream.write(arr.tobytes(order="C"))


def read_tensor(stream: BinaryIO) -> Tensor:
    head = stream.read(4)
    if head != MAGIC:
        raise FormatError(f"bad tensor magic {head!r}")
    raw = stream.read(1)
    if len(raw) != 1:
        raise FormatError("truncated tensor header")
    fmt = raw[0]
    if fmt not in _DTYPES:
        raise FormatError(f"unsupported tensor format version {fmt}")
    raw = stream.read(4)
    if len(raw) != 4:
        raise FormatError("truncated tensor header")
    rank = struct.unpack("<I", raw)[0]
    dims = []
    for _ in range(rank):
        raw = stream.read(4)
        if len(raw) != 4:
            raise FormatError("truncated tensor dimensions")
        dims.append(struct.unpack("<I", raw)[0])
    dtype = _DTYPES[fmt]
    count = int(np.prod(dims)) if dims else 1
    payload = stream.read(count * dtype.itemsize)
    if len(payload) != count * dtype.itemsize:
        raise FormatError("truncated tensor payload")
    arr = np.frombuffer(payload, dtype=dtype).reshape(dims)
    return arr.astype(np.float64)


def save_tensor(path, t: Tensor, fmt: int = FORMAT_F32) -> None:
    with open(path, "wb") as fh:
        write_tensor(fh, t, fmt)


def load_tensor(path) -> Tensor:
    with open(path, "rb") as fh:
        return read_tensor(fh)
