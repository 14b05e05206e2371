"""Differentiable operations over :class:`Tensor`.

Each operation is a :class:`Function` subclass with a ``forward`` over raw
arrays and a ``backward`` returning one gradient per input. Values needed by
``backward`` are saved on the function instance during ``forward``. The
lower-case helpers at the bottom of the module are the public API.
"""

from abc import ABC, abstractmethod
from enum import Enum
from typing import Optional, Sequence, Tuple

import numpy as np

from ..errors import ContractError, TensorShapeError, UnsupportedOperationError
from .tensor import Tensor, current_graph

Grads = Tuple[Optional[np.ndarray], ...]


class PaddingMode(str, Enum):
    """Border handling for convolutions."""
    ZERO = "zero"
    REFLECT = "reflect"


class Function(ABC):
    """Base class for all differentiable operations."""

    name: str = "function"

    @abstractmethod
    def forward(self, *arrays: np.ndarray) -> np.ndarray:
        """Compute the output array and save whatever backward needs."""

    @abstractmethod
    def backward(self, grad: np.ndarray) -> Grads:
        """Map d(loss)/d(output) to d(loss)/d(input) for every input."""

    @classmethod
    def apply(cls, *inputs: Tensor, **options) -> Tensor:
        function = cls(**options)
        output = Tensor(np.asarray(function.forward(*(t.data for t in inputs))))
        graph = current_graph()
        if graph is not None and any(t.requires_grad for t in inputs):
            output.requires_grad = True
            graph.record(function, inputs, output)
        return output


def _check_broadcast(a_shape: Tuple[int, ...], b_shape: Tuple[int, ...]) -> None:
    if a_shape == b_shape:
        return
    if len(a_shape) != len(b_shape) or any(
        b != a and b != 1 for a, b in zip(a_shape, b_shape)
    ):
        raise TensorShapeError(f"cannot broadcast {b_shape} onto {a_shape}")


def _reduce_to(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    """Sum ``grad`` over the axes where ``shape`` was broadcast from 1."""
    if grad.shape == shape:
        return grad
    axes = tuple(i for i, (g, s) in enumerate(zip(grad.shape, shape)) if s == 1 and g != 1)
    return grad.sum(axis=axes, keepdims=True)


class Elementwise(Function):
    name = "elementwise"
    KINDS = ("add", "sub", "mul", "div")

    def __init__(self, kind: str):
        if kind not in self.KINDS:
            raise UnsupportedOperationError(f"unknown elementwise kind {kind!r}")
        self.kind = kind

    def forward(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        _check_broadcast(a.shape, b.shape)
        self.a, self.b = a, b
        if self.kind == "add":
            return a + b
        if self.kind == "sub":
            return a - b
        if self.kind == "mul":
            return a * b
        return a / b

    def backward(self, grad: np.ndarray) -> Grads:
        a, b = self.a, self.b
        if self.kind == "add":
            return grad, _reduce_to(grad, b.shape)
        if self.kind == "sub":
            return grad, -_reduce_to(grad, b.shape)
        if self.kind == "mul":
            return grad * b, _reduce_to(grad * a, b.shape)
        return grad / b, _reduce_to(-grad * a / (b * b), b.shape)


class Affine(Function):
    """``scale * x + shift`` with constant scalars."""

    name = "affine"

    def __init__(self, scale: float = 1.0, shift: float = 0.0):
        self.scale = scale
        self.shift = shift

    def forward(self, x: np.ndarray) -> np.ndarray:
        return (x * x.dtype.type(self.scale) + x.dtype.type(self.shift)).astype(x.dtype, copy=False)

    def backward(self, grad: np.ndarray) -> Grads:
        return (grad * grad.dtype.type(self.scale),)


class Relu(Function):
    name = "relu"

    def forward(self, x: np.ndarray) -> np.ndarray:
        self.mask = x > 0
        return np.where(self.mask, x, x.dtype.type(0))

    def backward(self, grad: np.ndarray) -> Grads:
        return (grad * self.mask,)


class Sigmoid(Function):
    name = "sigmoid"

    def forward(self, x: np.ndarray) -> np.ndarray:
        out = np.empty_like(x)
        positive = x >= 0
        out[positive] = 1.0 / (1.0 + np.exp(-x[positive]))
        exp_x = np.exp(x[~positive])
        out[~positive] = exp_x / (1.0 + exp_x)
        self.out = out
        return out

    def backward(self, grad: np.ndarray) -> Grads:
        return (grad * self.out * (1.0 - self.out),)


class Absolute(Function):
    name = "abs"

    def forward(self, x: np.ndarray) -> np.ndarray:
        self.sign = np.sign(x)
        return np.abs(x)

    def backward(self, grad: np.ndarray) -> Grads:
        return (grad * self.sign,)


class Power(Function):
    """``max(x, 0) ** exponent``; the gradient is zero where the base is clamped."""

    name = "power"

    def __init__(self, exponent: float):
        self.exponent = exponent

    def forward(self, x: np.ndarray) -> np.ndarray:
        self.x = x
        return np.power(np.maximum(x, x.dtype.type(0)), x.dtype.type(self.exponent))

    def backward(self, grad: np.ndarray) -> Grads:
        x = self.x
        positive = x > 0
        safe = np.where(positive, x, x.dtype.type(1))
        local = np.where(positive, self.exponent * np.power(safe, self.exponent - 1.0), 0.0)
        return (grad * local.astype(x.dtype, copy=False),)


class Sum(Function):
    name = "sum"

    def __init__(self, axes: Optional[Tuple[int, ...]] = None, keepdims: bool = False):
        self.axes = axes
        self.keepdims = keepdims

    def forward(self, x: np.ndarray) -> np.ndarray:
        self.shape = x.shape
        return np.asarray(x.sum(axis=self.axes, keepdims=self.keepdims))

    def backward(self, grad: np.ndarray) -> Grads:
        if self.axes is not None and not self.keepdims:
            grad = np.expand_dims(grad, self.axes)
        return (np.broadcast_to(grad, self.shape),)


class Mean(Sum):
    name = "mean"

    def forward(self, x: np.ndarray) -> np.ndarray:
        total = super().forward(x)
        self.count = x.size // max(total.size, 1)
        return np.asarray(total / x.dtype.type(self.count))

    def backward(self, grad: np.ndarray) -> Grads:
        (spread,) = super().backward(grad)
        return (spread / spread.dtype.type(self.count),)


class GlobalAvgPool(Function):
    """NCHW -> NC11 spatial mean."""

    name = "global_avg_pool"

    def forward(self, x: np.ndarray) -> np.ndarray:
        if x.ndim != 4:
            raise TensorShapeError(f"global_avg_pool needs NCHW input, got {x.shape}")
        self.shape = x.shape
        return x.mean(axis=(2, 3), keepdims=True)

    def backward(self, grad: np.ndarray) -> Grads:
        _, _, h, w = self.shape
        return (np.broadcast_to(grad / grad.dtype.type(h * w), self.shape),)


class ChannelReduce(Function):
    """NCHW -> N1HW mean or max across channels (max ties go to the lowest channel)."""

    name = "channel_reduce"

    def __init__(self, kind: str):
        if kind not in ("mean", "max"):
            raise UnsupportedOperationError(f"unknown channel reduction {kind!r}")
        self.kind = kind

    def forward(self, x: np.ndarray) -> np.ndarray:
        if x.ndim != 4:
            raise TensorShapeError(f"channel_reduce needs NCHW input, got {x.shape}")
        self.shape = x.shape
        if self.kind == "mean":
            return x.mean(axis=1, keepdims=True)
        self.index = np.argmax(x, axis=1)[:, None]
        return np.take_along_axis(x, self.index, axis=1)

    def backward(self, grad: np.ndarray) -> Grads:
        if self.kind == "mean":
            return (np.broadcast_to(grad / grad.dtype.type(self.shape[1]), self.shape),)
        out = np.zeros(self.shape, dtype=grad.dtype)
        np.put_along_axis(out, self.index, grad, axis=1)
        return (out,)


class Concat(Function):
    name = "concat"

    def __init__(self, axis: int = 1):
        self.axis = axis

    def forward(self, *arrays: np.ndarray) -> np.ndarray:
        self.sizes = [a.shape[self.axis] for a in arrays]
        return np.concatenate(arrays, axis=self.axis)

    def backward(self, grad: np.ndarray) -> Grads:
        cuts = np.cumsum(self.sizes)[:-1]
        return tuple(np.split(grad, cuts, axis=self.axis))


class Reshape(Function):
    name = "reshape"

    def __init__(self, shape: Tuple[int, ...]):
        self.shape = tuple(shape)

    def forward(self, x: np.ndarray) -> np.ndarray:
        self.original = x.shape
        try:
            return x.reshape(self.shape)
        except ValueError as e:
            raise TensorShapeError(f"cannot reshape {x.shape} to {self.shape}") from e

    def backward(self, grad: np.ndarray) -> Grads:
        return (grad.reshape(self.original),)


def _pool_matrix(length: int, dtype) -> np.ndarray:
    """(length // 2, length) averaging operator along one axis.

    Even axes average disjoint pairs. Odd axes average the two pair
    alignments (drop first, drop last), i.e. taps 1/4, 1/2, 1/4, which
    commutes with reversing the axis.
    """
    out = length // 2
    matrix = np.zeros((out, length), dtype=dtype)
    rows = np.arange(out)
    if length % 2 == 0:
        matrix[rows, 2 * rows] = 0.5
        matrix[rows, 2 * rows + 1] = 0.5
    else:
        matrix[rows, 2 * rows] = 0.25
        matrix[rows, 2 * rows + 1] = 0.5
        matrix[rows, 2 * rows + 2] = 0.25
    return matrix


class AvgPool2x2(Function):
    """Stride-2 mean pooling to (H // 2, W // 2), symmetric on odd extents."""

    name = "avg_pool2x2"

    def forward(self, x: np.ndarray) -> np.ndarray:
        n, c, h, w = x.shape
        if h < 2 or w < 2:
            raise TensorShapeError(f"avg_pool2x2 needs H, W >= 2, got {x.shape}")
        self.rows = _pool_matrix(h, x.dtype)
        self.cols = _pool_matrix(w, x.dtype)
        return np.einsum("ih,nchw,jw->ncij", self.rows, x, self.cols, optimize=True)

    def backward(self, grad: np.ndarray) -> Grads:
        return (np.einsum("ih,ncij,jw->nchw", self.rows, grad, self.cols, optimize=True),)


class Rot90(Function):
    """Counter-clockwise rotation of the two trailing (spatial) axes by ``k`` quarter turns."""

    name = "rot90"

    def __init__(self, k: int):
        self.k = k % 4

    def forward(self, x: np.ndarray) -> np.ndarray:
        return np.ascontiguousarray(np.rot90(x, self.k, axes=(-2, -1)))

    def backward(self, grad: np.ndarray) -> Grads:
        return (np.ascontiguousarray(np.rot90(grad, -self.k, axes=(-2, -1))),)


class Conv2d(Function):
    """2-D cross-correlation, NCHW input, OIKK weight, optional bias.

    The input is unfolded into a (N, C*K*K, Ho*Wo) column matrix and
    multiplied by the flattened weights; backward folds column gradients
    back with one strided slice-add per kernel offset, in a fixed order.
    """

    name = "conv2d"

    def __init__(
        self,
        stride: int = 1,
        padding: Optional[int] = None,
        padding_mode: PaddingMode = PaddingMode.ZERO,
        has_bias: bool = True,
    ):
        if stride < 1:
            raise ContractError(f"stride must be positive, got {stride}")
        self.stride = stride
        self.padding = padding
        self.padding_mode = PaddingMode(padding_mode)
        self.has_bias = has_bias

    def forward(self, x: np.ndarray, weight: np.ndarray, bias: Optional[np.ndarray] = None) -> np.ndarray:
        if x.ndim != 4 or weight.ndim != 4:
            raise TensorShapeError(f"conv2d needs NCHW input and OIKK weight, got {x.shape} and {weight.shape}")
        n, c, h, w = x.shape
        out_channels, in_channels, k, k2 = weight.shape
        if k != k2:
            raise UnsupportedOperationError(f"only square kernels are supported, got {k}x{k2}")
        if k % 2 == 0:
            raise UnsupportedOperationError(f"kernel size must be odd, got {k}")
        if c != in_channels:
            raise TensorShapeError(f"input has {c} channels but weight expects {in_channels}")
        if bias is not None and bias.shape != (out_channels,):
            raise TensorShapeError(f"bias shape {bias.shape} does not match {out_channels} output channels")

        pad = (k - 1) // 2 if self.padding is None else self.padding
        self.pad = pad
        padded = self._pad(x, pad)
        hp, wp = padded.shape[2], padded.shape[3]
        if hp < k or wp < k:
            raise TensorShapeError(f"padded input {hp}x{wp} is smaller than kernel {k}")

        s = self.stride
        ho, wo = (hp - k) // s + 1, (wp - k) // s + 1
        cols = np.empty((n, c, k, k, ho, wo), dtype=x.dtype)
        for i in range(k):
            for j in range(k):
                cols[:, :, i, j] = padded[:, :, i : i + s * (ho - 1) + 1 : s, j : j + s * (wo - 1) + 1 : s]
        cols = cols.reshape(n, c * k * k, ho * wo)
        w_mat = weight.reshape(out_channels, c * k * k)

        self.cols, self.w_mat = cols, w_mat
        self.x_shape, self.padded_shape = x.shape, padded.shape
        self.kernel, self.out_hw = k, (ho, wo)

        out = np.matmul(w_mat, cols).reshape(n, out_channels, ho, wo)
        if bias is not None:
            out = out + bias.reshape(1, out_channels, 1, 1)
        return out

    def backward(self, grad: np.ndarray) -> Grads:
        n, c, _, _ = self.x_shape
        k, s = self.kernel, self.stride
        ho, wo = self.out_hw
        out_channels = self.w_mat.shape[0]
        g = grad.reshape(n, out_channels, ho * wo)

        d_weight = np.matmul(g, self.cols.transpose(0, 2, 1)).sum(axis=0)
        d_weight = d_weight.reshape(out_channels, c, k, k)

        d_cols = np.matmul(self.w_mat.T, g).reshape(n, c, k, k, ho, wo)
        d_padded = np.zeros(self.padded_shape, dtype=grad.dtype)
        for i in range(k):
            for j in range(k):
                d_padded[:, :, i : i + s * (ho - 1) + 1 : s, j : j + s * (wo - 1) + 1 : s] += d_cols[:, :, i, j]
        d_input = self._unpad(d_padded)

        if self.has_bias:
            return d_input, d_weight, grad.sum(axis=(0, 2, 3))
        return d_input, d_weight

    def _pad(self, x: np.ndarray, pad: int) -> np.ndarray:
        if pad == 0:
            return x
        widths = ((0, 0), (0, 0), (pad, pad), (pad, pad))
        if self.padding_mode is PaddingMode.REFLECT:
            return np.pad(x, widths, mode="reflect")
        return np.pad(x, widths, mode="constant")

    def _unpad(self, d_padded: np.ndarray) -> np.ndarray:
        pad = self.pad
        if pad == 0:
            return d_padded
        n, c, h, w = self.x_shape
        if self.padding_mode is PaddingMode.ZERO:
            return np.ascontiguousarray(d_padded[:, :, pad : pad + h, pad : pad + w])
        # Reflected borders fold their gradient back onto the source pixels.
        index = np.arange(h * w).reshape(h, w)
        source = np.pad(index, pad, mode="reflect").reshape(-1)
        d_input = np.zeros((n, c, h * w), dtype=d_padded.dtype)
        np.add.at(d_input, (slice(None), slice(None), source), d_padded.reshape(n, c, -1))
        return d_input.reshape(self.x_shape)


# ---------------------------------------------------------------------------
# Public functional API
# ---------------------------------------------------------------------------

def elementwise(a: Tensor, b: Tensor, kind: str) -> Tensor:
    """add / sub / mul / div; ``b`` may broadcast onto ``a`` along singleton axes."""
    return Elementwise.apply(a, b, kind=kind)


def add(a: Tensor, b: Tensor) -> Tensor:
    return elementwise(a, b, "add")


def mul(a: Tensor, b: Tensor) -> Tensor:
    return elementwise(a, b, "mul")


def affine(x: Tensor, scale: float = 1.0, shift: float = 0.0) -> Tensor:
    return Affine.apply(x, scale=scale, shift=shift)


def activation(x: Tensor, kind: str) -> Tensor:
    if kind == "relu":
        return Relu.apply(x)
    if kind == "sigmoid":
        return Sigmoid.apply(x)
    raise UnsupportedOperationError(f"unknown activation {kind!r}")


def relu(x: Tensor) -> Tensor:
    return Relu.apply(x)


def sigmoid(x: Tensor) -> Tensor:
    return Sigmoid.apply(x)


def absolute(x: Tensor) -> Tensor:
    return Absolute.apply(x)


def power(x: Tensor, exponent: float) -> Tensor:
    return Power.apply(x, exponent=exponent)


def tensor_sum(x: Tensor, axes: Optional[Tuple[int, ...]] = None, keepdims: bool = False) -> Tensor:
    return Sum.apply(x, axes=axes, keepdims=keepdims)


def mean(x: Tensor, axes: Optional[Tuple[int, ...]] = None, keepdims: bool = False) -> Tensor:
    return Mean.apply(x, axes=axes, keepdims=keepdims)


def global_avg_pool(x: Tensor) -> Tensor:
    return GlobalAvgPool.apply(x)


def channel_reduce(x: Tensor, kind: str) -> Tensor:
    return ChannelReduce.apply(x, kind=kind)


def concat(tensors: Sequence[Tensor], axis: int = 1) -> Tensor:
    return Concat.apply(*tensors, axis=axis)


def reshape(x: Tensor, shape: Tuple[int, ...]) -> Tensor:
    return Reshape.apply(x, shape=shape)


def avg_pool2x2(x: Tensor) -> Tensor:
    return AvgPool2x2.apply(x)


def rot90(x: Tensor, k: int) -> Tensor:
    return Rot90.apply(x, k=k)


def conv2d(
    x: Tensor,
    weight: Tensor,
    bias: Optional[Tensor] = None,
    stride: int = 1,
    padding: Optional[int] = None,
    padding_mode: PaddingMode = PaddingMode.ZERO,
) -> Tensor:
    """Convolution; ``padding=None`` means same-size padding ``(K - 1) // 2``."""
    if bias is None:
        return Conv2d.apply(x, weight, stride=stride, padding=padding, padding_mode=padding_mode, has_bias=False)
    return Conv2d.apply(x, weight, bias, stride=stride, padding=padding, padding_mode=padding_mode)
