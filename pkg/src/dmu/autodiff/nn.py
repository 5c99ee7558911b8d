"""Convolution, transposed convolution, dense layers and CoordConv.

Kernels follow the (out, in, k, k) layout for ``conv2d`` and (in, out, k, k)
for ``deconv2d``; ``deconv2d`` with a kernel is the exact adjoint of
``conv2d`` with the same kernel.  Default padding is ``(k - 1) // 2`` so a
k=4, stride-2 layer halves (or doubles) the spatial size exactly.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .tensor import Tensor, add, as_tensor, concat, get_default_dtype, make_node, matmul, relu


def default_padding(k: int) -> int:
    return (k - 1) // 2


def conv_output_size(n: int, k: int, stride: int, padding: int) -> int:
    return (n + 2 * padding - k) // stride + 1


def _pad(x: np.ndarray, p: int) -> np.ndarray:
    if p == 0:
        return x
    return np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)))


def _windows(x: np.ndarray, k: int, stride: int, padding: int, out_hw) -> np.ndarray:
    """(N, C, Ho, Wo, k, k) view of the padded input."""
    ho, wo = out_hw
    win = sliding_window_view(_pad(x, padding), (k, k), axis=(2, 3))
    return win[:, :, : stride * (ho - 1) + 1 : stride, : stride * (wo - 1) + 1 : stride]


def correlate(x: np.ndarray, w: np.ndarray, stride: int, padding: int) -> np.ndarray:
    """Plain cross-correlation: x (N,C,H,W), w (K,C,k,k) -> (N,K,Ho,Wo)."""
    n, c, h, wd = x.shape
    kk = w.shape[2]
    if kk == 1 and stride == 1 and padding == 0:
        return np.matmul(w[:, :, 0, 0], x.reshape(n, c, h * wd)).reshape(n, w.shape[0], h, wd)
    ho, wo = conv_output_size(h, kk, stride, padding), conv_output_size(wd, kk, stride, padding)
    win = _windows(x, kk, stride, padding, (ho, wo))
    out = np.tensordot(win, w, axes=([1, 4, 5], [1, 2, 3]))
    return np.ascontiguousarray(out.transpose(0, 3, 1, 2))


def correlate_input_grad(g: np.ndarray, w: np.ndarray, in_shape, stride: int, padding: int) -> np.ndarray:
    """Adjoint of :func:`correlate` in its input: g (N,K,Ho,Wo) -> (N,C,H,W)."""
    n, c, h, wd = in_shape
    kk = w.shape[2]
    ho, wo = g.shape[2], g.shape[3]
    if kk == 1 and stride == 1 and padding == 0:
        return np.matmul(w[:, :, 0, 0].T, g.reshape(n, g.shape[1], ho * wo)).reshape(n, c, h, wd)
    cols = np.tensordot(g, w, axes=([1], [0]))  # N, Ho, Wo, C, k, k
    cols = cols.transpose(0, 3, 4, 5, 1, 2)  # N, C, k, k, Ho, Wo
    hp, wp = h + 2 * padding, wd + 2 * padding
    hp = max(hp, stride * (ho - 1) + kk)
    wp = max(wp, stride * (wo - 1) + kk)
    dx = np.zeros((n, c, hp, wp), dtype=g.dtype)
    for i in range(kk):
        for j in range(kk):
            dx[:, :, i : i + stride * (ho - 1) + 1 : stride, j : j + stride * (wo - 1) + 1 : stride] += cols[:, :, i, j]
    return dx[:, :, padding : padding + h, padding : padding + wd]


def correlate_kernel_grad(g: np.ndarray, x: np.ndarray, k: int, stride: int, padding: int) -> np.ndarray:
    """Gradient of ``<g, correlate(x, w)>`` with respect to w, shape (K,C,k,k)."""
    n, c = x.shape[:2]
    if k == 1 and stride == 1 and padding == 0:
        gk = g.reshape(n, g.shape[1], -1).transpose(1, 0, 2).reshape(g.shape[1], -1)
        xc = x.reshape(n, c, -1).transpose(1, 0, 2).reshape(c, -1)
        return (gk @ xc.T)[:, :, None, None]
    win = _windows(x, k, stride, padding, g.shape[2:])
    return np.tensordot(g, win, axes=([0, 2, 3], [0, 2, 3]))


def conv2d(x, kernel, stride: int = 1, padding: int | None = None) -> Tensor:
    x, kernel = as_tensor(x), as_tensor(kernel)
    if x.data.ndim != 4 or kernel.data.ndim != 4:
        raise ValueError(f"conv2d: expected 4-D input and kernel, got {x.shape}, {kernel.shape}")
    if x.shape[1] != kernel.shape[1]:
        raise ValueError(f"conv2d: input has {x.shape[1]} channels, kernel expects {kernel.shape[1]}")
    k = kernel.shape[2]
    p = default_padding(k) if padding is None else padding
    if x.shape[2] + 2 * p < k or x.shape[3] + 2 * p < k:
        raise ValueError(f"conv2d: input {x.shape[2:]} smaller than kernel {k} with padding {p}")
    out = correlate(x.data, kernel.data, stride, p)

    def backward_fn(g):
        dx = correlate_input_grad(g, kernel.data, x.shape, stride, p) if x.requires_grad else None
        dw = correlate_kernel_grad(g, x.data, k, stride, p) if kernel.requires_grad else None
        return dx, dw

    return make_node(out, (x, kernel), backward_fn, "conv2d")


def deconv2d(x, kernel, stride: int = 1, padding: int | None = None, output_size=None) -> Tensor:
    """Transposed convolution; kernel layout (in, out, k, k)."""
    x, kernel = as_tensor(x), as_tensor(kernel)
    if x.data.ndim != 4 or kernel.data.ndim != 4:
        raise ValueError(f"deconv2d: expected 4-D input and kernel, got {x.shape}, {kernel.shape}")
    if x.shape[1] != kernel.shape[0]:
        raise ValueError(f"deconv2d: input has {x.shape[1]} channels, kernel expects {kernel.shape[0]}")
    k = kernel.shape[2]
    p = default_padding(k) if padding is None else padding
    if output_size is None:
        output_size = ((x.shape[2] - 1) * stride - 2 * p + k, (x.shape[3] - 1) * stride - 2 * p + k)
    out_shape = (x.shape[0], kernel.shape[1], *output_size)
    if any(conv_output_size(o, k, stride, p) != i for o, i in zip(output_size, x.shape[2:])):
        raise ValueError(f"deconv2d: output size {output_size} incompatible with input {x.shape[2:]}")
    out = correlate_input_grad(x.data, kernel.data, out_shape, stride, p)

    def backward_fn(g):
        dx = correlate(g, kernel.data, stride, p) if x.requires_grad else None
        dw = correlate_kernel_grad(x.data, g, k, stride, p) if kernel.requires_grad else None
        return dx, dw

    return make_node(np.ascontiguousarray(out), (x, kernel), backward_fn, "deconv2d")


def coord_channels(h: int, w: int, dtype) -> np.ndarray:
    """(2, H, W): column then row index, each scaled linearly to [-1, 1]."""
    cols = np.linspace(-1.0, 1.0, w) if w > 1 else np.zeros(1)
    rows = np.linspace(-1.0, 1.0, h) if h > 1 else np.zeros(1)
    rr, cc = np.meshgrid(rows, cols, indexing="ij")
    return np.stack([cc, rr]).astype(dtype)


def coordconv_augment(x) -> Tensor:
    """Append normalized pixel-coordinate channels: (N,C,H,W) -> (N,C+2,H,W)."""
    x = as_tensor(x)
    n, _, h, w = x.shape
    coords = np.broadcast_to(coord_channels(h, w, x.dtype), (n, 2, h, w))
    return concat([x, Tensor(np.ascontiguousarray(coords), dtype=x.dtype)], axis=1)


def linear(x, weight, bias=None) -> Tensor:
    """x (N, in), weight (out, in), bias (out,)."""
    x, weight = as_tensor(x), as_tensor(weight)
    if x.data.ndim != 2 or x.shape[1] != weight.shape[1]:
        raise ValueError(f"linear: input {x.shape} incompatible with weight {weight.shape}")
    w_t = make_node(weight.data.T, (weight,), lambda g: (g.T,), "transpose")
    out = matmul(x, w_t)
    return out if bias is None else add(out, bias)


# ---------------------------------------------------------------------------
# layers


def _param(data: np.ndarray, dtype) -> Tensor:
    return Tensor(np.asarray(data, dtype=dtype), requires_grad=True)


class Layer:
    def parameters(self) -> dict[str, Tensor]:
        return {name: t for name, t in vars(self).items() if isinstance(t, Tensor)}


class Conv2d(Layer):
    def __init__(self, cin, cout, k, stride=1, coord=False, rng=None, dtype=None):
        rng = rng or np.random.default_rng(0)
        dtype = dtype or get_default_dtype()
        self.stride, self.coord = stride, coord
        fan_in = (cin + 2 * coord) * k * k
        self.weight = _param(rng.normal(0.0, np.sqrt(2.0 / fan_in), (cout, cin + 2 * coord, k, k)), dtype)
        self.bias = _param(np.zeros(cout), dtype)

    def __call__(self, x: Tensor) -> Tensor:
        if self.coord:
            x = coordconv_augment(x)
        out = conv2d(x, self.weight, self.stride)
        return add(out, self.bias.reshape(1, -1, 1, 1))


class Deconv2d(Layer):
    def __init__(self, cin, cout, k, stride=1, coord=False, rng=None, dtype=None):
        rng = rng or np.random.default_rng(0)
        dtype = dtype or get_default_dtype()
        self.stride, self.coord = stride, coord
        fan_in = (cin + 2 * coord) * k * k / (stride * stride)
        self.weight = _param(rng.normal(0.0, np.sqrt(2.0 / fan_in), (cin + 2 * coord, cout, k, k)), dtype)
        self.bias = _param(np.zeros(cout), dtype)

    def __call__(self, x: Tensor) -> Tensor:
        if self.coord:
            x = coordconv_augment(x)
        out = deconv2d(x, self.weight, self.stride)
        return add(out, self.bias.reshape(1, -1, 1, 1))


class Linear(Layer):
    def __init__(self, cin, cout, rng=None, dtype=None):
        rng = rng or np.random.default_rng(0)
        dtype = dtype or get_default_dtype()
        self.weight = _param(rng.normal(0.0, np.sqrt(2.0 / cin), (cout, cin)), dtype)
        self.bias = _param(np.zeros(cout), dtype)

    def __call__(self, x: Tensor) -> Tensor:
        return linear(x, self.weight, self.bias)


__all__ = [
    "Conv2d",
    "Deconv2d",
    "Layer",
    "Linear",
    "conv2d",
    "coord_channels",
    "coordconv_augment",
    "deconv2d",
    "linear",
    "relu",
]
