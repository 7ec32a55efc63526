"""
Differentiable layers on N x C x H x W tensors.

Convolutions use "same" zero padding with ceil division, so a stride-2
convolution maps H to ceil(H/2). A transpose convolution is the exact adjoint
of a strided convolution and is told its output size, which resolves the
odd sizes (103, 13, 7) that a fixed output padding cannot express.
"""

import math

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from reswcae.autodiff import Tensor, reshape
from reswcae.models import ConfigurationError, ContractViolationError, DimensionError

KERNEL_SIZE = 3


def glorot_uniform(rng, shape, fan_in, fan_out, dtype):
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape).astype(dtype)


class ConvLayer:
    """
    A 3x3 convolution.

    Down-mode kernels are stored out x in x 3 x 3. Transpose-mode kernels are stored
    in x out x 3 x 3, the layout of the strided convolution they are the adjoint of.

    Attributes:
        in_channels (int): Channels consumed.
        out_channels (int): Channels produced.
        stride (int): 1 or 2.
        mode (str): `down` or `transpose`.
        kernel (Tensor): Weights.
        bias (Tensor): One value per output channel.
    """

    def __init__(self, in_channels, out_channels, stride=1, mode="down", rng=None, dtype=np.float32):
        if stride not in (1, 2):
            raise ConfigurationError(f"Convolution stride must be 1 or 2, got {stride}.")
        if mode not in ("down", "transpose"):
            raise ConfigurationError(f"Convolution mode must be 'down' or 'transpose', got '{mode}'.")
        if in_channels < 1 or out_channels < 1:
            raise ConfigurationError("Convolution channel counts must be positive.")
        rng = rng if rng is not None else np.random.default_rng(0)
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.stride = stride
        self.mode = mode

        if mode == "down":
            shape = (out_channels, in_channels, KERNEL_SIZE, KERNEL_SIZE)
        else:
            shape = (in_channels, out_channels, KERNEL_SIZE, KERNEL_SIZE)
        area = KERNEL_SIZE * KERNEL_SIZE
        weights = glorot_uniform(rng, shape, in_channels * area, out_channels * area, dtype)
        self.kernel = Tensor(weights, requires_grad=True)
        self.bias = Tensor(np.zeros(out_channels, dtype=dtype), requires_grad=True)

    def parameters(self):
        return [self.kernel, self.bias]

    def output_size(self, height, width):
        return math.ceil(height / self.stride), math.ceil(width / self.stride)

    def __repr__(self):
        return (
            f"ConvLayer({self.in_channels}->{self.out_channels}, stride={self.stride}, mode={self.mode})"
        )


class DenseLayer:
    """
    A fully connected layer, weight stored in x out.

    Attributes:
        in_features (int): Input width.
        out_features (int): Output width.
        weight (Tensor): Weights.
        bias (Tensor): One value per output unit.
    """

    def __init__(self, in_features, out_features, rng=None, dtype=np.float32):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.in_features = in_features
        self.out_features = out_features
        self.weight = Tensor(
            glorot_uniform(rng, (in_features, out_features), in_features, out_features, dtype),
            requires_grad=True,
        )
        self.bias = Tensor(np.zeros(out_features, dtype=dtype), requires_grad=True)

    def parameters(self):
        return [self.weight, self.bias]

    def __repr__(self):
        return f"DenseLayer({self.in_features}->{self.out_features})"


def _padding(size, out_size, stride):
    """Zero padding (before, after) for a 3-tap window to produce `out_size` outputs."""
    total = max((out_size - 1) * stride + KERNEL_SIZE - size, 0)
    return total // 2, total - total // 2


def _im2col(x, stride, pads, out_h, out_w):
    (top, bottom), (left, right) = pads
    padded = np.pad(x, ((0, 0), (0, 0), (top, bottom), (left, right)))
    windows = sliding_window_view(padded, (KERNEL_SIZE, KERNEL_SIZE), axis=(2, 3))
    windows = windows[:, :, ::stride, ::stride][:, :, :out_h, :out_w]
    n, c = x.shape[:2]
    return windows.transpose(0, 2, 3, 1, 4, 5).reshape(n, out_h, out_w, c * KERNEL_SIZE**2)


def _correlate(x, weights, stride, pads, out_h, out_w):
    """Cross-correlate N x C x H x W with an O x C x 3 x 3 kernel; returns (output, columns)."""
    cols = _im2col(x, stride, pads, out_h, out_w)
    flat = weights.reshape(weights.shape[0], -1)
    out = np.ascontiguousarray((cols @ flat.T).transpose(0, 3, 1, 2))
    return out, cols


def _correlate_adjoint(dy, weights, stride, pads, in_h, in_w):
    """Adjoint of `_correlate` with respect to its input."""
    (top, bottom), (left, right) = pads
    n, _, out_h, out_w = dy.shape
    channels = weights.shape[1]
    dcols = np.tensordot(dy, weights, axes=([1], [0]))
    padded = np.zeros((n, channels, in_h + top + bottom, in_w + left + right), dtype=dy.dtype)
    row_stop = stride * (out_h - 1) + 1
    col_stop = stride * (out_w - 1) + 1
    for ki in range(KERNEL_SIZE):
        for kj in range(KERNEL_SIZE):
            padded[:, :, ki : ki + row_stop : stride, kj : kj + col_stop : stride] += dcols[
                :, :, :, :, ki, kj
            ].transpose(0, 3, 1, 2)
    return padded[:, :, top : top + in_h, left : left + in_w]


def _weight_grad(dy, cols, weight_shape):
    grad = np.tensordot(dy.transpose(1, 0, 2, 3), cols, axes=([1, 2, 3], [0, 1, 2]))
    return grad.reshape(weight_shape)


def _batched(x, fn):
    """Run a batched layer function on a single C x H x W tensor."""
    if x.ndim == 3:
        out = fn(reshape(x, (1,) + x.shape))
        return reshape(out, out.shape[1:])
    if x.ndim != 4:
        raise ContractViolationError(f"Expected a C x H x W or N x C x H x W tensor, got shape {x.shape}.")
    return fn(x)


def conv2d(layer, x):
    """
    Apply a down-mode convolution.

    Args:
        layer (ConvLayer): A `down` layer.
        x (Tensor): C x H x W or N x C x H x W input.

    Returns:
        Tensor: Output with ceil(H/stride) x ceil(W/stride) spatial size.

    Raises:
        ContractViolationError: Wrong mode or channel count.
    """
    if layer.mode != "down":
        raise ContractViolationError("conv2d requires a layer in 'down' mode.")
    return _batched(x, lambda t: _conv2d(layer, t))


def _conv2d(layer, x):
    n, channels, height, width = x.shape
    if channels != layer.in_channels:
        raise ContractViolationError(
            f"conv2d expected {layer.in_channels} input channels, got {channels}."
        )
    stride = layer.stride
    out_h, out_w = layer.output_size(height, width)
    pads = (_padding(height, out_h, stride), _padding(width, out_w, stride))
    weights = layer.kernel.data
    out, cols = _correlate(x.data, weights, stride, pads, out_h, out_w)
    out += layer.bias.data[None, :, None, None]

    def backward_fn(grad):
        dx = _correlate_adjoint(grad, weights, stride, pads, height, width)
        return dx, _weight_grad(grad, cols, weights.shape), grad.sum(axis=(0, 2, 3))

    return Tensor._from_op(out, (x, layer.kernel, layer.bias), backward_fn, "conv2d")


def conv2d_transpose(layer, x, target_h, target_w):
    """
    Apply a transpose-mode convolution with an explicit output size.

    Args:
        layer (ConvLayer): A `transpose` layer.
        x (Tensor): C x H x W or N x C x H x W input.
        target_h (int): Output height, within [stride*H - stride, stride*H + stride].
        target_w (int): Output width, within [stride*W - stride, stride*W + stride].

    Returns:
        Tensor: Output of exactly target_h x target_w.

    Raises:
        ContractViolationError: Wrong mode or channel count.
        DimensionError: Unreachable target size.
    """
    if layer.mode != "transpose":
        raise ContractViolationError("conv2d_transpose requires a layer in 'transpose' mode.")
    return _batched(x, lambda t: _conv2d_transpose(layer, t, target_h, target_w))


def transpose_padding(size, target, stride):
    low, high = stride * size - stride, stride * size + stride
    if not low <= target <= high:
        raise DimensionError(
            f"Transpose convolution cannot map size {size} to {target} with stride {stride}; "
            f"reachable sizes are {low}..{high}."
        )
    return _padding(target, size, stride)


def _conv2d_transpose(layer, x, target_h, target_w):
    n, channels, height, width = x.shape
    if channels != layer.in_channels:
        raise ContractViolationError(
            f"conv2d_transpose expected {layer.in_channels} input channels, got {channels}."
        )
    stride = layer.stride
    pads = (
        transpose_padding(height, target_h, stride),
        transpose_padding(width, target_w, stride),
    )
    weights = layer.kernel.data
    out = _correlate_adjoint(x.data, weights, stride, pads, target_h, target_w)
    out = out + layer.bias.data[None, :, None, None]

    def backward_fn(grad):
        dx, cols = _correlate(grad, weights, stride, pads, height, width)
        return dx, _weight_grad(x.data, cols, weights.shape), grad.sum(axis=(0, 2, 3))

    return Tensor._from_op(out, (x, layer.kernel, layer.bias), backward_fn, "conv2d_transpose")


def interpolation_matrix(size_in, size_out, dtype=np.float64):
    """
    Linear interpolation weights with the align-corners convention.

    Args:
        size_in (int): Source length.
        size_out (int): Target length.
        dtype (numpy.dtype): Matrix precision.

    Returns:
        numpy.ndarray: size_out x size_in matrix whose rows sum to one.
    """
    matrix = np.zeros((size_out, size_in), dtype=dtype)
    if size_in == 1 or size_out == 1:
        matrix[:, 0] = 1
        return matrix
    scale = (size_in - 1) / (size_out - 1)
    for i in range(size_out):
        position = i * scale
        lo = min(int(math.floor(position)), size_in - 1)
        hi = min(lo + 1, size_in - 1)
        frac = position - lo
        matrix[i, lo] += 1 - frac
        matrix[i, hi] += frac
    return matrix


def resize_array(array, target_h, target_w):
    """Bilinearly resize the last two axes of a numpy array (align-corners)."""
    rows = interpolation_matrix(array.shape[-2], target_h, array.dtype)
    cols = interpolation_matrix(array.shape[-1], target_w, array.dtype)
    return rows @ array @ cols.T


def bilinear_resize(x, target_h, target_w):
    """
    Bilinearly resize every channel of a tensor, corners mapping to corners.

    Args:
        x (Tensor): C x H x W or N x C x H x W input.
        target_h (int): Output height, at least 1.
        target_w (int): Output width, at least 1.

    Returns:
        Tensor: The resized tensor.
    """
    if target_h < 1 or target_w < 1:
        raise ContractViolationError(f"Resize targets must be >= 1, got {target_h}x{target_w}.")
    height, width = x.shape[-2:]
    if (height, width) == (target_h, target_w):
        return x
    rows = interpolation_matrix(height, target_h, x.dtype)
    cols = interpolation_matrix(width, target_w, x.dtype)
    out = rows @ x.data @ cols.T
    return Tensor._from_op(
        out, (x,), lambda grad: (rows.T @ grad @ cols,), "bilinear_resize"
    )


def concat_channels(a, b):
    """
    Concatenate two tensors along the channel axis, `a` first.

    Args:
        a (Tensor): C1 x H x W or N x C1 x H x W.
        b (Tensor): C2 x H x W or N x C2 x H x W.

    Returns:
        Tensor: (C1 + C2) channels.

    Raises:
        DimensionError: Differing rank, batch or spatial size.
    """
    if a.ndim != b.ndim or a.ndim not in (3, 4):
        raise DimensionError(f"Cannot concatenate shapes {a.shape} and {b.shape}.")
    axis = a.ndim - 3
    if a.shape[:axis] != b.shape[:axis] or a.shape[-2:] != b.shape[-2:]:
        raise DimensionError(f"Cannot concatenate shapes {a.shape} and {b.shape}.")
    split = a.shape[axis]
    out = np.concatenate([a.data, b.data], axis=axis)

    def backward_fn(grad):
        first, second = np.split(grad, [split], axis=axis)
        return first, second

    return Tensor._from_op(out, (a, b), backward_fn, "concat_channels")


def dense(layer, x):
    """Affine map of an N x in_features tensor."""
    if x.ndim != 2 or x.shape[1] != layer.in_features:
        raise ContractViolationError(
            f"dense expected N x {layer.in_features} input, got shape {x.shape}."
        )
    weight, bias = layer.weight, layer.bias
    out = x.data @ weight.data + bias.data

    def backward_fn(grad):
        return grad @ weight.data.T, x.data.T @ grad, grad.sum(axis=0)

    return Tensor._from_op(out, (x, weight, bias), backward_fn, "dense")
