"""Forward and backward passes for the five layer kinds in the network.

Convolution is cross-correlation implemented with an im2col view: windows
come from ``sliding_window_view`` and the contraction runs through one BLAS
matmul. Backward scatters per-kernel-offset slices, which keeps the
accumulation order fixed and the result bit-reproducible.

All math is float64; gradients are exact (verified against central finite
differences in the test suite).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, Optional, Tuple

import numpy as np

from .errors import ParameterError, ShapeError
from .tensor import Tensor


@dataclass
class ConvParams:
    kernel_count: int
    kernel_size: int
    stride: int
    padding: int
    weights: Tensor  # [kernel_count, in_channels, k, k]
    bias: Tensor  # [kernel_count]

    def __post_init__(self):
        if self.kernel_count < 1 or self.kernel_size < 1 or self.stride < 1:
            raise ParameterError("conv kernel_count/kernel_size/stride must be positive")
        if self.padding < 0:
            raise ParameterError("conv padding must be non-negative")
        k = self.kernel_size
        if self.weights.ndim != 4 or self.weights.shape[0] != self.kernel_count \
                or self.weights.shape[2] != k or self.weights.shape[3] != k:
            raise ShapeError(f"conv weights shape {self.weights.shape} does not match "
                             f"[{self.kernel_count}, C, {k}, {k}]")
        if self.bias.shape != (self.kernel_count,):
            raise ShapeError(f"conv bias shape {self.bias.shape} != ({self.kernel_count},)")

    @property
    def in_channels(self) -> int:
        return self.weights.shape[1]


@dataclass
class LayerGrad:
    input_grad: Tensor
    parameter_grads: Dict[str, Tensor] = field(default_factory=dict)


def conv_output_size(size: int, kernel: int, stride: int, padding: int) -> int:
    out = (size + 2 * padding - kernel) // stride + 1
    if out < 1:
        raise ShapeError(f"conv output collapses: input {size}, kernel {kernel}, "
                         f"stride {stride}, padding {padding}")
    return out


def _pad_input(x: Tensor, padding: int) -> Tensor:
    if padding == 0:
        return x
    return np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))


def _conv_cols(x_pad: Tensor, k: int, stride: int, oh: int, ow: int) -> Tensor:
    """im2col: [N, C, Hp, Wp] -> [N*oh*ow, C*k*k]."""
    windows = np.lib.stride_tricks.sliding_window_view(x_pad, (k, k), axis=(2, 3))
    windows = windows[:, :, ::stride, ::stride, :, :]  # [N, C, oh, ow, k, k]
    n, c = x_pad.shape[0], x_pad.shape[1]
    return windows.transpose(0, 2, 3, 1, 4, 5).reshape(n * oh * ow, c * k * k)


def conv2d_forward(x: Tensor, p: ConvParams,
                   return_cols: bool = False):
    if x.ndim != 4:
        raise ShapeError(f"conv input must be [N,C,H,W], got rank {x.ndim}")
    n, c, h, w = x.shape
    if c != p.in_channels:
        raise ShapeError(f"conv input has {c} channels, weights expect {p.in_channels}")
    k, s = p.kernel_size, p.stride
    oh = conv_output_size(h, k, s, p.padding)
    ow = conv_output_size(w, k, s, p.padding)
    cols = _conv_cols(_pad_input(x, p.padding), k, s, oh, ow)
    wmat = p.weights.reshape(p.kernel_count, -1).T  # [C*k*k, O]
    out = cols @ wmat + p.bias
    out = out.reshape(n, oh, ow, p.kernel_count).transpose(0, 3, 1, 2)
    return (out, cols) if return_cols else out


def _conv_input_grad_stride1(p: ConvParams, output_grad: Tensor,
                             h: int, w: int) -> Tensor:
    """Stride-1 input gradient: full cross-correlation of the output grad
    with the 180-degree-rotated kernels, channels transposed."""
    n = output_grad.shape[0]
    k = p.kernel_size
    g_pad = np.pad(output_grad, ((0, 0), (0, 0), (k - 1, k - 1), (k - 1, k - 1)))
    hp = h + 2 * p.padding
    wp = w + 2 * p.padding
    gcols = _conv_cols(g_pad, k, 1, hp, wp)  # [N*hp*wp, O*k*k]
    rot = p.weights[:, :, ::-1, ::-1].transpose(0, 2, 3, 1)  # [O, k, k, C]
    dx_pad = (gcols @ rot.reshape(-1, p.in_channels))
    dx_pad = dx_pad.reshape(n, hp, wp, p.in_channels).transpose(0, 3, 1, 2)
    pad = p.padding
    return dx_pad[:, :, pad:pad + h, pad:pad + w] if pad else dx_pad


def conv2d_backward(x: Tensor, p: ConvParams, output_grad: Tensor,
                    cols: Optional[Tensor] = None) -> LayerGrad:
    n, c, h, w = x.shape
    k, s = p.kernel_size, p.stride
    oh = conv_output_size(h, k, s, p.padding)
    ow = conv_output_size(w, k, s, p.padding)
    if output_grad.shape != (n, p.kernel_count, oh, ow):
        raise ShapeError(f"conv output_grad shape {output_grad.shape} != "
                         f"{(n, p.kernel_count, oh, ow)}")
    if cols is None:
        cols = _conv_cols(_pad_input(x, p.padding), k, s, oh, ow)
    gmat = np.ascontiguousarray(output_grad.transpose(0, 2, 3, 1)) \
        .reshape(n * oh * ow, p.kernel_count)

    grad_w = (gmat.T @ cols).reshape(p.weights.shape)
    grad_b = gmat.sum(axis=0)

    if s == 1:
        dx = _conv_input_grad_stride1(p, output_grad, h, w)
    else:
        # scatter column gradients back through the im2col map, one (ki,kj)
        # offset at a time so overlaps accumulate deterministically
        dcols = (gmat @ p.weights.reshape(p.kernel_count, -1))
        dcols = np.ascontiguousarray(
            dcols.reshape(n, oh, ow, c, k, k).transpose(0, 3, 4, 5, 1, 2))
        dx_pad = np.zeros((n, c, h + 2 * p.padding, w + 2 * p.padding))
        for ki in range(k):
            for kj in range(k):
                dx_pad[:, :, ki:ki + s * oh:s, kj:kj + s * ow:s] += \
                    dcols[:, :, ki, kj]
        pad = p.padding
        dx = dx_pad[:, :, pad:pad + h, pad:pad + w] if pad else dx_pad
    return LayerGrad(dx, {"weights": grad_w, "bias": grad_b})


@dataclass
class PoolIndices:
    """Argmax bookkeeping from maxpool_forward, consumed by the backward pass."""

    input_shape: Tuple[int, int, int, int]
    window: int
    stride: int
    flat_positions: np.ndarray  # [N, C, oh, ow] flat indices into H*W


def maxpool_forward(x: Tensor, window: int, stride: int) -> Tuple[Tensor, PoolIndices]:
    if x.ndim != 4:
        raise ShapeError(f"maxpool input must be [N,C,H,W], got rank {x.ndim}")
    if window < 1 or stride < 1:
        raise ParameterError("pool window and stride must be positive")
    n, c, h, w = x.shape
    if window > h or window > w:
        raise ShapeError(f"pool window {window} exceeds input {h}x{w}")
    oh = (h - window) // stride + 1
    ow = (w - window) // stride + 1
    windows = np.lib.stride_tricks.sliding_window_view(x, (window, window), axis=(2, 3))
    windows = windows[:, :, ::stride, ::stride, :, :].reshape(n, c, oh, ow, window * window)
    local = np.argmax(windows, axis=-1)  # ties -> lowest flat window index
    out = np.take_along_axis(windows, local[..., None], axis=-1)[..., 0]

    base_r = (np.arange(oh) * stride)[:, None]
    base_c = (np.arange(ow) * stride)[None, :]
    rows = base_r + local // window
    cols = base_c + local % window
    flat = rows * w + cols
    return out, PoolIndices((n, c, h, w), window, stride, flat)


def maxpool_backward(indices: PoolIndices, output_grad: Tensor) -> Tensor:
    if output_grad.shape != indices.flat_positions.shape:
        raise ShapeError(f"pool output_grad shape {output_grad.shape} != "
                         f"{indices.flat_positions.shape}")
    n, c, h, w = indices.input_shape
    dx = np.zeros((n, c, h * w), dtype=np.float64)
    oh, ow = output_grad.shape[2], output_grad.shape[3]
    n_idx = np.arange(n)[:, None, None, None]
    c_idx = np.arange(c)[None, :, None, None]
    np.add.at(dx, (np.broadcast_to(n_idx, output_grad.shape),
                   np.broadcast_to(c_idx, output_grad.shape),
                   indices.flat_positions), output_grad)
    return dx.reshape(n, c, h, w)


@dataclass
class LrnParams:
    depth: int = 5  # channel neighborhood size n
    alpha: float = 1e-4
    beta: float = 0.75
    k_offset: float = 2.0

    def __post_init__(self):
        if self.depth < 1 or self.alpha < 0 or self.beta <= 0 or self.k_offset <= 0:
            raise ParameterError("lrn parameters out of range")


def _lrn_sums(x: Tensor, depth: int) -> Tensor:
    """Per-channel neighborhood sum of squares over c-r .. c+r (clamped)."""
    sq = x * x
    c = x.shape[1]
    radius = depth // 2
    csum = np.cumsum(sq, axis=1)
    csum = np.concatenate([np.zeros_like(csum[:, :1]), csum], axis=1)
    hi = np.minimum(np.arange(c) + radius + 1, c)
    lo = np.maximum(np.arange(c) - radius, 0)
    return csum[:, hi] - csum[:, lo]


def lrn_forward(x: Tensor, p: LrnParams) -> Tensor:
    denom = p.k_offset + (p.alpha / p.depth) * _lrn_sums(x, p.depth)
    return x * denom ** (-p.beta)


def lrn_backward(x: Tensor, p: LrnParams, output_grad: Tensor) -> Tensor:
    if output_grad.shape != x.shape:
        raise ShapeError("lrn output_grad shape mismatch")
    denom = p.k_offset + (p.alpha / p.depth) * _lrn_sums(x, p.depth)
    scale = denom ** (-p.beta)
    # d b_i / d a_m = delta_im * scale_i - (2 alpha beta / n) a_i d_i^{-b-1} a_m
    # for |i - m| <= radius; the window sum below is the adjoint of _lrn_sums
    inner = output_grad * x * denom ** (-p.beta - 1.0)
    c = x.shape[1]
    radius = p.depth // 2
    csum = np.cumsum(inner, axis=1)
    csum = np.concatenate([np.zeros_like(csum[:, :1]), csum], axis=1)
    hi = np.minimum(np.arange(c) + radius + 1, c)
    lo = np.maximum(np.arange(c) - radius, 0)
    window = csum[:, hi] - csum[:, lo]
    return output_grad * scale - (2.0 * p.alpha * p.beta / p.depth) * x * window


def relu_forward(x: Tensor) -> Tensor:
    return np.maximum(x, 0.0)


def relu_backward(x: Tensor, output_grad: Tensor) -> Tensor:
    if output_grad.shape != x.shape:
        raise ShapeError("relu output_grad shape mismatch")
    return np.where(x > 0.0, output_grad, 0.0)


def fc_forward(x: Tensor, weights: Tensor, bias: Tensor) -> Tensor:
    if x.ndim != 2 or weights.ndim != 2:
        raise ShapeError("fc expects rank-2 input and weights")
    if x.shape[1] != weights.shape[0] or bias.shape != (weights.shape[1],):
        raise ShapeError(f"fc shapes do not compose: x {x.shape}, w {weights.shape}, "
                         f"b {bias.shape}")
    return x @ weights + bias


def fc_backward(x: Tensor, weights: Tensor, output_grad: Tensor) -> LayerGrad:
    if output_grad.shape != (x.shape[0], weights.shape[1]):
        raise ShapeError(f"fc output_grad shape {output_grad.shape} != "
                         f"{(x.shape[0], weights.shape[1])}")
    grad_w = x.T @ output_grad
    grad_b = output_grad.sum(axis=0)
    dx = output_grad @ weights.T
    return LayerGrad(dx, {"weights": grad_w, "bias": grad_b})
