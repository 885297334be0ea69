"""
`hieraseg` differentiable ops.

Only what the segmentation networks, merging blocks, interaction units and
losses need. Image tensors are laid out (B, C, H, W); convolutions are
stride 1 with same padding.
"""

from __future__ import annotations

from typing import Optional, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from hieraseg.exceptions import ShapeError

from .tensor import Function, Tensor, as_tensor


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, dim in enumerate(shape):
        if dim == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _check_broadcast(op: str, a: np.ndarray, b: np.ndarray) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(op, a.shape, b.shape) from None


def _check_ndim(op: str, x: np.ndarray, ndim: int) -> None:
    if x.ndim != ndim:
        raise ShapeError(f"{op} (expects {ndim}-D input)", x.shape)


def stable_sigmoid(x: np.ndarray) -> np.ndarray:
    z = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + z), z / (1.0 + z))


# -- elementwise ---------------------------------------------------------------


class Add(Function):
    name = "add"

    def forward(self, a, b):
        _check_broadcast(self.name, a, b)
        self.shapes = (a.shape, b.shape)
        return a + b

    def backward(self, grad):
        return _unbroadcast(grad, self.shapes[0]), _unbroadcast(grad, self.shapes[1])


class Sub(Function):
    name = "sub"

    def forward(self, a, b):
        _check_broadcast(self.name, a, b)
        self.shapes = (a.shape, b.shape)
        return a - b

    def backward(self, grad):
        return _unbroadcast(grad, self.shapes[0]), _unbroadcast(-grad, self.shapes[1])


class Mul(Function):
    name = "mul"

    def forward(self, a, b):
        _check_broadcast(self.name, a, b)
        self.a, self.b = a, b
        return a * b

    def backward(self, grad):
        return (
            _unbroadcast(grad * self.b, self.a.shape),
            _unbroadcast(grad * self.a, self.b.shape),
        )


class Scale(Function):
    name = "scale"

    def forward(self, x):
        return x * self.params["factor"]

    def backward(self, grad):
        return (grad * self.params["factor"],)


class ReLU(Function):
    name = "relu"

    def forward(self, x):
        self.mask = x > 0
        return np.where(self.mask, x, 0.0)

    def backward(self, grad):
        return (np.where(self.mask, grad, 0.0),)

    def branch(self):
        return self.mask


class Sigmoid(Function):
    name = "sigmoid"

    def forward(self, x):
        self.out = stable_sigmoid(x)
        return self.out

    def backward(self, grad):
        return (grad * self.out * (1.0 - self.out),)


class Softmax(Function):
    name = "softmax"

    def forward(self, x):
        axis = self.params["axis"]
        shifted = x - x.max(axis=axis, keepdims=True)
        e = np.exp(shifted)
        self.out = e / e.sum(axis=axis, keepdims=True)
        return self.out

    def backward(self, grad):
        axis = self.params["axis"]
        s = self.out
        return (s * (grad - (grad * s).sum(axis=axis, keepdims=True)),)


class LogSoftmax(Function):
    name = "log_softmax"

    def forward(self, x):
        axis = self.params["axis"]
        shifted = x - x.max(axis=axis, keepdims=True)
        log_norm = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
        out = shifted - log_norm
        self.softmax = np.exp(out)
        return out

    def backward(self, grad):
        axis = self.params["axis"]
        return (grad - self.softmax * grad.sum(axis=axis, keepdims=True),)


# -- linear algebra ------------------------------------------------------------


class MatMul(Function):
    name = "matmul"

    def forward(self, a, b):
        if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
            raise ShapeError(self.name, a.shape, b.shape)
        try:
            np.broadcast_shapes(a.shape[:-2], b.shape[:-2])
        except ValueError:
            raise ShapeError(self.name, a.shape, b.shape) from None
        self.a, self.b = a, b
        return np.matmul(a, b)

    def backward(self, grad):
        grad_a = np.matmul(grad, np.swapaxes(self.b, -1, -2))
        grad_b = np.matmul(np.swapaxes(self.a, -1, -2), grad)
        return _unbroadcast(grad_a, self.a.shape), _unbroadcast(grad_b, self.b.shape)


class Conv2d(Function):
    """Cross-correlation, stride 1, zero 'same' padding, odd square kernels."""

    name = "conv2d"

    def forward(self, x, w):
        _check_ndim(self.name, x, 4)
        if w.ndim != 4 or w.shape[1] != x.shape[1] or w.shape[2] != w.shape[3] or w.shape[2] % 2 == 0:
            raise ShapeError(self.name, x.shape, w.shape)
        batch, channels, height, width = x.shape
        out_channels, _, k, _ = w.shape
        if k == 1:
            cols = x.transpose(0, 2, 3, 1).reshape(-1, channels)
        else:
            p = k // 2
            padded = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)))
            windows = sliding_window_view(padded, (k, k), axis=(2, 3))
            cols = windows.transpose(0, 2, 3, 1, 4, 5).reshape(-1, channels * k * k)
        wmat = w.reshape(out_channels, -1)
        self.cols, self.wmat = cols, wmat
        self.x_shape, self.w_shape = x.shape, w.shape
        out = cols @ wmat.T
        return np.ascontiguousarray(
            out.reshape(batch, height, width, out_channels).transpose(0, 3, 1, 2)
        )

    def backward(self, grad):
        batch, channels, height, width = self.x_shape
        out_channels, _, k, _ = self.w_shape
        gcols = grad.transpose(0, 2, 3, 1).reshape(-1, out_channels)
        grad_w = (gcols.T @ self.cols).reshape(self.w_shape)
        gcols_in = gcols @ self.wmat
        if k == 1:
            grad_x = gcols_in.reshape(batch, height, width, channels).transpose(0, 3, 1, 2)
            return grad_x, grad_w
        p = k // 2
        gwin = gcols_in.reshape(batch, height, width, channels, k, k)
        grad_padded = np.zeros((batch, channels, height + 2 * p, width + 2 * p))
        for i in range(k):
            for j in range(k):
                grad_padded[:, :, i : i + height, j : j + width] += gwin[..., i, j].transpose(0, 3, 1, 2)
        return grad_padded[:, :, p : p + height, p : p + width], grad_w


# -- pooling and resampling ----------------------------------------------------


class GlobalAvgPool(Function):
    name = "global_avg_pool"

    def forward(self, x):
        _check_ndim(self.name, x, 4)
        self.x_shape = x.shape
        return x.mean(axis=(2, 3), keepdims=True)

    def backward(self, grad):
        _, _, height, width = self.x_shape
        return (np.broadcast_to(grad / (height * width), self.x_shape),)


class GlobalMaxPool(Function):
    """Gradient flows to the first maximal position."""

    name = "global_max_pool"

    def forward(self, x):
        _check_ndim(self.name, x, 4)
        batch, channels, _, _ = x.shape
        flat = x.reshape(batch, channels, -1)
        self.index = flat.argmax(axis=2)[..., None]
        self.x_shape = x.shape
        return np.take_along_axis(flat, self.index, axis=2)[..., None]

    def backward(self, grad):
        batch, channels, height, width = self.x_shape
        grad_flat = np.zeros((batch, channels, height * width))
        np.put_along_axis(grad_flat, self.index, grad.reshape(batch, channels, 1), axis=2)
        return (grad_flat.reshape(self.x_shape),)

    def branch(self):
        return self.index


class ChannelAvgPool(Function):
    name = "channel_avg_pool"

    def forward(self, x):
        _check_ndim(self.name, x, 4)
        self.x_shape = x.shape
        return x.mean(axis=1, keepdims=True)

    def backward(self, grad):
        return (np.broadcast_to(grad / self.x_shape[1], self.x_shape),)


class ChannelMaxPool(Function):
    """Gradient flows to the first maximal channel."""

    name = "channel_max_pool"

    def forward(self, x):
        _check_ndim(self.name, x, 4)
        self.index = x.argmax(axis=1)[:, None]
        self.x_shape = x.shape
        return np.take_along_axis(x, self.index, axis=1)

    def backward(self, grad):
        grad_x = np.zeros(self.x_shape)
        np.put_along_axis(grad_x, self.index, grad, axis=1)
        return (grad_x,)

    def branch(self):
        return self.index


class AvgPool2d(Function):
    """2x2 average pooling, stride 2."""

    name = "avg_pool2d"

    def forward(self, x):
        _check_ndim(self.name, x, 4)
        batch, channels, height, width = x.shape
        if height % 2 or width % 2:
            raise ShapeError(f"{self.name} (needs even H and W)", x.shape)
        return x.reshape(batch, channels, height // 2, 2, width // 2, 2).mean(axis=(3, 5))

    def backward(self, grad):
        return (np.repeat(np.repeat(grad, 2, axis=2), 2, axis=3) / 4.0,)


def _interpolation_matrix(size_in: int, size_out: int) -> np.ndarray:
    """Half-pixel (align_corners=False) linear interpolation weights, (out, in)."""
    matrix = np.zeros((size_out, size_in))
    src = (np.arange(size_out) + 0.5) * (size_in / size_out) - 0.5
    src = np.clip(src, 0.0, size_in - 1)
    lo = np.floor(src).astype(np.int64)
    hi = np.minimum(lo + 1, size_in - 1)
    frac = src - lo
    rows = np.arange(size_out)
    np.add.at(matrix, (rows, lo), 1.0 - frac)
    np.add.at(matrix, (rows, hi), frac)
    return matrix


class BilinearUpsample(Function):
    name = "bilinear_upsample"

    def forward(self, x):
        _check_ndim(self.name, x, 4)
        out_h, out_w = self.params["size"]
        self.rows = _interpolation_matrix(x.shape[2], out_h)
        self.cols = _interpolation_matrix(x.shape[3], out_w)
        return np.matmul(np.matmul(self.rows, x), self.cols.T)

    def backward(self, grad):
        return (np.matmul(np.matmul(self.rows.T, grad), self.cols),)


# -- structural ----------------------------------------------------------------


class Concat(Function):
    name = "concat"

    def forward(self, *arrays):
        axis = self.params["axis"]
        first = arrays[0]
        for other in arrays[1:]:
            if other.ndim != first.ndim or any(
                a != b for i, (a, b) in enumerate(zip(first.shape, other.shape)) if i != axis % first.ndim
            ):
                raise ShapeError(self.name, first.shape, other.shape)
        self.splits = np.cumsum([a.shape[axis] for a in arrays])[:-1]
        return np.concatenate(arrays, axis=axis)

    def backward(self, grad):
        return tuple(np.split(grad, self.splits, axis=self.params["axis"]))


class Reshape(Function):
    name = "reshape"

    def forward(self, x):
        self.x_shape = x.shape
        try:
            return x.reshape(self.params["shape"])
        except ValueError:
            raise ShapeError(self.name, x.shape, self.params["shape"]) from None

    def backward(self, grad):
        return (grad.reshape(self.x_shape),)


class Transpose(Function):
    name = "transpose"

    def forward(self, x):
        axes = self.params["axes"]
        if sorted(axes) != list(range(x.ndim)):
            raise ShapeError(self.name, x.shape, axes)
        return x.transpose(axes)

    def backward(self, grad):
        return (grad.transpose(np.argsort(self.params["axes"])),)


class Sum(Function):
    name = "sum"

    def forward(self, x):
        self.x_shape = x.shape
        return np.asarray(x.sum(axis=self.params["axis"], keepdims=self.params["keepdims"]))

    def backward(self, grad):
        axis = self.params["axis"]
        if axis is not None and not self.params["keepdims"]:
            axes = (axis,) if np.isscalar(axis) else tuple(axis)
            grad = np.expand_dims(grad, tuple(a % len(self.x_shape) for a in axes))
        return (np.broadcast_to(grad, self.x_shape),)


class LayerNormCore(Function):
    """Normalization over the last axis without the affine part."""

    name = "layer_norm"

    def forward(self, x):
        eps = self.params["eps"]
        mu = x.mean(axis=-1, keepdims=True)
        centered = x - mu
        var = (centered * centered).mean(axis=-1, keepdims=True)
        self.inv_std = 1.0 / np.sqrt(var + eps)
        self.xhat = centered * self.inv_std
        return self.xhat

    def backward(self, grad):
        xhat = self.xhat
        mean_grad = grad.mean(axis=-1, keepdims=True)
        mean_grad_xhat = (grad * xhat).mean(axis=-1, keepdims=True)
        return (self.inv_std * (grad - mean_grad - xhat * mean_grad_xhat),)


# -- functional surface --------------------------------------------------------


def add(a, b) -> Tensor:
    return Add.apply(a, b)


def sub(a, b) -> Tensor:
    return Sub.apply(a, b)


def mul(a, b) -> Tensor:
    return Mul.apply(a, b)


def scale(x, factor: float) -> Tensor:
    return Scale.apply(x, factor=float(factor))


def matmul(a, b) -> Tensor:
    return MatMul.apply(a, b)


def conv2d(x, weight, bias=None) -> Tensor:
    out = Conv2d.apply(x, weight)
    if bias is not None:
        out = add(out, reshape(bias, (1, -1, 1, 1)))
    return out


def linear(x, weight, bias=None) -> Tensor:
    """`x @ weight + bias` with `weight` shaped (in, out)."""
    out = matmul(x, weight)
    if bias is not None:
        out = add(out, bias)
    return out


def global_avg_pool(x) -> Tensor:
    return GlobalAvgPool.apply(x)


def global_max_pool(x) -> Tensor:
    return GlobalMaxPool.apply(x)


def channel_avg_pool(x) -> Tensor:
    return ChannelAvgPool.apply(x)


def channel_max_pool(x) -> Tensor:
    return ChannelMaxPool.apply(x)


def avg_pool2d(x) -> Tensor:
    return AvgPool2d.apply(x)


def bilinear_upsample(x, size: Optional[tuple[int, int]] = None, factor: int = 2) -> Tensor:
    x = as_tensor(x)
    if size is None:
        size = (x.shape[2] * factor, x.shape[3] * factor)
    return BilinearUpsample.apply(x, size=tuple(int(s) for s in size))


def concat(tensors: Sequence, axis: int = 1) -> Tensor:
    if not tensors:
        raise ShapeError("concat (nothing to concatenate)")
    return Concat.apply(*tensors, axis=axis)


def relu(x) -> Tensor:
    return ReLU.apply(x)


def sigmoid(x) -> Tensor:
    return Sigmoid.apply(x)


def softmax(x, axis: int = 1) -> Tensor:
    return Softmax.apply(x, axis=axis)


def log_softmax(x, axis: int = 1) -> Tensor:
    return LogSoftmax.apply(x, axis=axis)


def reduce_sum(x, axis=None, keepdims: bool = False) -> Tensor:
    if axis is not None and not np.isscalar(axis):
        axis = tuple(axis)
    return Sum.apply(x, axis=axis, keepdims=keepdims)


def reduce_mean(x, axis=None, keepdims: bool = False) -> Tensor:
    x = as_tensor(x)
    if axis is None:
        count = x.size
    else:
        axes = (axis,) if np.isscalar(axis) else tuple(axis)
        count = int(np.prod([x.shape[a] for a in axes]))
    return scale(reduce_sum(x, axis=axis, keepdims=keepdims), 1.0 / count)


def reshape(x, shape) -> Tensor:
    return Reshape.apply(x, shape=tuple(shape))


def transpose(x, axes) -> Tensor:
    return Transpose.apply(x, axes=tuple(axes))


def layer_norm(x, weight=None, bias=None, eps: float = 1e-5) -> Tensor:
    out = LayerNormCore.apply(x, eps=eps)
    if weight is not None:
        out = mul(out, weight)
    if bias is not None:
        out = add(out, bias)
    return out


# Names used by the Tensor operator overloads
sum = reduce_sum  # noqa: A001
mean = reduce_mean
