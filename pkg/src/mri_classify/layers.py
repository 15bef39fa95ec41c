"""Layer forward/backward rules: 3x3 convolution, 2x2 max-pooling, ReLU,
dense, dropout, and sigmoid.

All image-shaped tensors are channel-last ``[H, W, C]``. Convolutions are
fixed at kernel 3x3, stride 1, zero padding 1, so spatial dimensions are
preserved; max-pooling is 2x2 stride 2, halving them. Layers are pure
functions of (input, params, state) and record themselves on the active
gradient tape.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ShapeError
from .tensor import Tensor, record_op

_SIGMOID_LO = np.float32(1e-38)
_SIGMOID_HI = np.float32(1.0 - 2 ** -24)


@dataclass
class Conv2dParams:
    """3x3 same-convolution weights: kernels [out, in, 3, 3], bias [out]."""

    kernels: Tensor
    bias: Tensor

    def __post_init__(self):
        kshape = self.kernels.shape
        if len(kshape) != 4 or kshape[2:] != (3, 3):
            raise ShapeError(f"kernels must be [out, in, 3, 3], got {kshape}")
        if self.bias.shape != (kshape[0],):
            raise ShapeError(f"bias shape {self.bias.shape} does not match {kshape[0]} kernels")

    @property
    def out_channels(self) -> int:
        return self.kernels.shape[0]

    @property
    def in_channels(self) -> int:
        return self.kernels.shape[1]


@dataclass
class DenseParams:
    """Fully connected weights [in_features, out_features] and bias [out_features]."""

    weights: Tensor
    bias: Tensor

    def __post_init__(self):
        if len(self.weights.shape) != 2:
            raise ShapeError(f"weights must be rank 2, got {self.weights.shape}")
        if self.bias.shape != (self.weights.shape[1],):
            raise ShapeError(
                f"bias shape {self.bias.shape} does not match {self.weights.shape[1]} outputs"
            )

    @property
    def in_features(self) -> int:
        return self.weights.shape[0]

    @property
    def out_features(self) -> int:
        return self.weights.shape[1]


@dataclass
class DropoutState:
    """Dropout configuration: rate in [0, 1), mode, and a mask seed."""

    rate: float
    mode: str = "inference"  # training|inference
    rng_seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.rate < 1.0:
            raise ValueError(f"dropout rate must be in [0, 1), got {self.rate}")
        if self.mode not in ("training", "inference"):
            raise ValueError(f"mode must be 'training' or 'inference', got {self.mode!r}")


def conv2d(x: Tensor, params: Conv2dParams) -> Tensor:
    """Same-convolution: out[r,c,o] = bias[o] + sum_{c',i,j} x[r+i-1, c+j-1, c'] * k[o,c',i,j].

    Coordinates outside the input read as zero. Implemented as an im2col
    patch matrix times a reshaped kernel matrix.
    """
    if len(x.shape) != 3:
        raise ShapeError(f"conv2d input must be [H, W, C], got {x.shape}")
    h, w, cin = x.shape
    if cin != params.in_channels:
        raise ShapeError(
            f"input has {cin} channels but kernels expect {params.in_channels}"
        )
    cout = params.out_channels

    padded = np.zeros((h + 2, w + 2, cin), dtype=np.float32)
    padded[1:-1, 1:-1] = x.data
    # [H, W, C, 3, 3] -> [H*W, 3*3*C] with flat index (i*3 + j)*C + c
    windows = sliding_window_view(padded, (3, 3), axis=(0, 1))
    cols = np.ascontiguousarray(windows.transpose(0, 1, 3, 4, 2)).reshape(h * w, 9 * cin)
    kmat = np.ascontiguousarray(params.kernels.data.transpose(2, 3, 1, 0)).reshape(9 * cin, cout)
    out_flat = cols @ kmat + params.bias.data
    out = Tensor.from_array(out_flat.reshape(h, w, cout))

    def bwd(g):
        g2 = g.reshape(h * w, cout)
        gk = (cols.T @ g2).reshape(3, 3, cin, cout).transpose(3, 2, 0, 1)
        gb = g2.sum(axis=0)
        gcols = (g2 @ kmat.T).reshape(h, w, 3, 3, cin)
        gpad = np.zeros_like(padded)
        for i in range(3):
            for j in range(3):
                gpad[i:i + h, j:j + w] += gcols[:, :, i, j, :]
        return gpad[1:-1, 1:-1], gk, gb

    return record_op((x, params.kernels, params.bias), out, bwd)


def maxpool2d(x: Tensor) -> Tensor:
    """2x2 max-pooling with stride 2. Gradient routes to the argmax cell of
    each window; ties go to the first cell in row-major scan order."""
    if len(x.shape) != 3:
        raise ShapeError(f"maxpool2d input must be [H, W, C], got {x.shape}")
    h, w, c = x.shape
    if h % 2 or w % 2:
        raise ShapeError(f"maxpool2d needs even spatial dims, got {h}x{w}")
    ho, wo = h // 2, w // 2
    # windows flattened row-major: [(0,0), (0,1), (1,0), (1,1)]
    win = x.data.reshape(ho, 2, wo, 2, c).transpose(0, 2, 1, 3, 4).reshape(ho, wo, 4, c)
    idx = win.argmax(axis=2)
    out = Tensor.from_array(win.max(axis=2))

    def bwd(g):
        gwin = np.zeros((ho, wo, 4, c), dtype=np.float32)
        np.put_along_axis(gwin, idx[:, :, None, :], g[:, :, None, :], axis=2)
        return (gwin.reshape(ho, wo, 2, 2, c).transpose(0, 2, 1, 3, 4).reshape(h, w, c),)

    return record_op((x,), out, bwd)


def relu(x: Tensor) -> Tensor:
    """Elementwise max(0, x); gradient passes where x > 0."""
    out = Tensor.from_array(np.maximum(x.data, 0.0))
    mask = x.data > 0

    def bwd(g):
        return (g * mask,)

    return record_op((x,), out, bwd)


def bias_add(x: Tensor, bias: Tensor) -> Tensor:
    """Add a [n] bias across the rows of a [..., n] tensor. The one
    broadcasting pattern the stack supports."""
    if len(bias.shape) != 1 or x.shape[-1] != bias.shape[0]:
        raise ShapeError(f"bias {bias.shape} does not match input {x.shape}")
    out = Tensor.from_array(x.data + bias.data)

    def bwd(g):
        return g, g.reshape(-1, bias.shape[0]).sum(axis=0)

    return record_op((x, bias), out, bwd)


def dense(x: Tensor, params: DenseParams) -> Tensor:
    """Fully connected layer: out = x @ W + bias for a [1, in] input."""
    from .tensor import matmul  # local to keep layer deps one-way

    if len(x.shape) != 2 or x.shape[1] != params.in_features:
        raise ShapeError(
            f"dense input {x.shape} does not match weights {params.weights.shape}"
        )
    return bias_add(matmul(x, params.weights), params.bias)


def dropout(x: Tensor, state: DropoutState) -> Tensor:
    """Randomly zero elements at the configured rate during training.

    Survivors are scaled by 1/(1-rate) so inference is the identity. The
    mask is drawn deterministically from ``state.rng_seed``; backward
    applies the same mask and scale.
    """
    if state.mode == "inference":
        out = Tensor.from_array(x.data)

        def bwd_id(g):
            return (g,)

        return record_op((x,), out, bwd_id)

    rng = np.random.default_rng(state.rng_seed)
    keep = rng.random(x.shape) >= state.rate
    scale = np.float32(1.0 / (1.0 - state.rate))
    mask = keep.astype(np.float32) * scale
    out = Tensor.from_array(x.data * mask)

    def bwd(g):
        return (g * mask,)

    return record_op((x,), out, bwd)


def sigmoid(x: Tensor) -> Tensor:
    """Elementwise logistic function 1/(1 + e^-x), clamped into (0, 1)."""
    xd = x.data
    pos = xd >= 0
    y = np.empty_like(xd)
    y[pos] = 1.0 / (1.0 + np.exp(-xd[pos]))
    ex = np.exp(xd[~pos])
    y[~pos] = ex / (1.0 + ex)
    y = np.clip(y, _SIGMOID_LO, _SIGMOID_HI)
    out = Tensor.from_array(y)

    def bwd(g):
        return (g * y * (1.0 - y),)

    return record_op((x,), out, bwd)
