"""Unit tests for convolution, transpose convolution, resizing and concatenation."""

import math

import numpy as np
import pytest

from reswcae.autodiff import Tensor, backward, elementwise, reduce
from reswcae.layers import (
    ConvLayer,
    DenseLayer,
    bilinear_resize,
    concat_channels,
    conv2d,
    conv2d_transpose,
    dense,
    interpolation_matrix,
)
from reswcae.models import ConfigurationError, ContractViolationError, DimensionError
from test_autodiff import numerical_gradient


def reference_conv(x, kernel, bias, stride):
    """Direct "same" cross-correlation of a C x H x W array."""
    _, height, width = x.shape
    out_h, out_w = math.ceil(height / stride), math.ceil(width / stride)
    pad_h = max((out_h - 1) * stride + 3 - height, 0)
    pad_w = max((out_w - 1) * stride + 3 - width, 0)
    padded = np.pad(x, ((0, 0), (pad_h // 2, pad_h - pad_h // 2), (pad_w // 2, pad_w - pad_w // 2)))
    out = np.zeros((kernel.shape[0], out_h, out_w))
    for o in range(kernel.shape[0]):
        for i in range(out_h):
            for j in range(out_w):
                window = padded[:, i * stride : i * stride + 3, j * stride : j * stride + 3]
                out[o, i, j] = np.sum(window * kernel[o]) + bias[o]
    return out


@pytest.mark.parametrize("stride,size", [(1, (5, 6)), (2, (7, 6)), (2, (13, 12))])
def test_conv2d_matches_direct_correlation(rng, stride, size):
    layer = ConvLayer(3, 4, stride, "down", rng, np.float64)
    layer.bias.data[...] = rng.normal(size=4)
    x = rng.normal(size=(3,) + size)

    out = conv2d(layer, Tensor(x))

    expected = reference_conv(x, layer.kernel.data, layer.bias.data, stride)
    np.testing.assert_allclose(out.data, expected, atol=1e-12)


def test_stride_two_halves_with_ceiling(rng):
    layer = ConvLayer(1, 2, 2, "down", rng)
    out = conv2d(layer, Tensor(np.zeros((4, 1, 103, 96), dtype=np.float32)))
    assert out.shape == (4, 2, 52, 48)
    assert out.dtype == np.float32


@pytest.mark.parametrize("size,small", [((13, 12), (7, 6)), ((103, 96), (52, 48)), ((12, 12), (6, 6))])
def test_transpose_is_adjoint_of_strided_conv(rng, size, small):
    down = ConvLayer(3, 5, 2, "down", rng, np.float64)
    up = ConvLayer(5, 3, 2, "transpose", rng, np.float64)
    up.kernel.data[...] = down.kernel.data

    x = rng.normal(size=(2, 3) + size)
    y = rng.normal(size=(2, 5) + small)
    forward = conv2d(down, Tensor(x)).data
    adjoint = conv2d_transpose(up, Tensor(y), *size).data

    assert forward.shape == y.shape
    assert adjoint.shape == x.shape
    assert np.sum(forward * y) == pytest.approx(np.sum(x * adjoint), rel=1e-10)


@pytest.mark.parametrize("source,target", [((7, 6), (13, 12)), ((13, 12), (26, 24)), ((26, 24), (52, 48))])
def test_transpose_reaches_encoder_sizes(rng, source, target):
    layer = ConvLayer(2, 3, 2, "transpose", rng)
    out = conv2d_transpose(layer, Tensor(np.ones((2,) + source, dtype=np.float32)), *target)
    assert out.shape == (3,) + target


def test_unreachable_transpose_target(rng):
    layer = ConvLayer(2, 3, 2, "transpose", rng)
    with pytest.raises(DimensionError, match="reachable sizes are 12..16"):
        conv2d_transpose(layer, Tensor(np.ones((2, 7, 7))), 17, 14)


def test_conv_channel_mismatch(rng):
    layer = ConvLayer(2, 3, 1, "down", rng)
    with pytest.raises(ContractViolationError, match="2 input channels"):
        conv2d(layer, Tensor(np.ones((3, 5, 5))))


def test_conv_mode_is_checked(rng):
    with pytest.raises(ContractViolationError):
        conv2d(ConvLayer(1, 1, 2, "transpose", rng), Tensor(np.ones((1, 4, 4))))
    with pytest.raises(ConfigurationError):
        ConvLayer(1, 1, 3, "down", rng)


def _check_layer_gradients(layer, x_values, apply):
    x = Tensor(x_values, requires_grad=True, dtype=np.float64)
    backward(reduce("sum", elementwise("square", apply(x))))

    def fn():
        return float(np.sum(apply(Tensor(x_values)).data ** 2))

    np.testing.assert_allclose(x.grad, numerical_gradient(fn, x_values), rtol=1e-5, atol=1e-8)
    for param in (layer.kernel, layer.bias):
        np.testing.assert_allclose(param.grad, numerical_gradient(fn, param.data), rtol=1e-5, atol=1e-8)


@pytest.mark.parametrize("stride", [1, 2])
def test_conv2d_gradients(rng, stride):
    layer = ConvLayer(2, 3, stride, "down", rng, np.float64)
    layer.bias.data[...] = rng.normal(size=3)
    _check_layer_gradients(layer, rng.normal(size=(2, 2, 5, 4)), lambda x: conv2d(layer, x))


def test_conv2d_transpose_gradients(rng):
    layer = ConvLayer(3, 2, 2, "transpose", rng, np.float64)
    layer.bias.data[...] = rng.normal(size=2)
    _check_layer_gradients(
        layer, rng.normal(size=(2, 3, 3, 4)), lambda x: conv2d_transpose(layer, x, 5, 8)
    )


def test_dense_gradients(rng):
    layer = DenseLayer(4, 3, rng, np.float64)
    layer.bias.data[...] = rng.normal(size=3)

    class Adapter:
        kernel = layer.weight
        bias = layer.bias

    _check_layer_gradients(Adapter, rng.normal(size=(2, 4)), lambda x: dense(layer, x))


def test_interpolation_matrix_aligns_corners():
    matrix = interpolation_matrix(7, 13)
    np.testing.assert_allclose(matrix.sum(axis=1), 1.0)
    assert matrix[0, 0] == 1.0
    assert matrix[-1, -1] == 1.0
    np.testing.assert_allclose(matrix[1], [0.5, 0.5, 0, 0, 0, 0, 0])


def test_bilinear_resize_corners_and_identity(rng):
    x = Tensor(rng.normal(size=(1, 2, 6, 7)))
    out = bilinear_resize(x, 11, 4)
    assert out.shape == (1, 2, 11, 4)
    np.testing.assert_allclose(out.data[..., 0, 0], x.data[..., 0, 0], rtol=1e-6)
    np.testing.assert_allclose(out.data[..., -1, -1], x.data[..., -1, -1], rtol=1e-6)
    assert bilinear_resize(x, 6, 7) is x


def test_bilinear_resize_gradients(rng):
    values = rng.normal(size=(1, 2, 4, 3))
    x = Tensor(values, requires_grad=True, dtype=np.float64)
    weights = rng.normal(size=(1, 2, 7, 5))
    backward(reduce("sum", elementwise("mul", bilinear_resize(x, 7, 5), Tensor(weights))))

    def fn():
        return float(np.sum(bilinear_resize(Tensor(values), 7, 5).data * weights))

    np.testing.assert_allclose(x.grad, numerical_gradient(fn, values), rtol=1e-6, atol=1e-9)


def test_concat_channels_splits_gradient():
    a = Tensor(np.ones((2, 3, 4, 4)), requires_grad=True)
    b = Tensor(np.ones((2, 1, 4, 4)), requires_grad=True)
    out = concat_channels(a, b)
    assert out.shape == (2, 4, 4, 4)

    weights = np.arange(4, dtype=np.float32)[None, :, None, None] * np.ones((2, 4, 4, 4), dtype=np.float32)
    backward(reduce("sum", elementwise("mul", out, Tensor(weights))))
    np.testing.assert_allclose(a.grad[:, 2], 2.0)
    np.testing.assert_allclose(b.grad, 3.0)


def test_concat_spatial_mismatch_names_both_shapes():
    with pytest.raises(DimensionError, match=r"\(1, 2, 4, 4\).*\(1, 2, 4, 5\)"):
        concat_channels(Tensor(np.ones((1, 2, 4, 4))), Tensor(np.ones((1, 2, 4, 5))))


def test_identity_kernel_returns_input(rng):
    layer = ConvLayer(3, 3, 1, "down", rng, np.float64)
    layer.kernel.data[...] = 0.0
    for channel in range(3):
        layer.kernel.data[channel, channel, 1, 1] = 1.0
    x = rng.normal(size=(2, 3, 13, 12))
    np.testing.assert_array_equal(conv2d(layer, Tensor(x, dtype=np.float64)).data, x)


def test_bilinear_resize_two_by_two_to_three_by_three():
    x = Tensor(np.array([[[[0.0, 1.0], [2.0, 3.0]]]]), dtype=np.float64)
    out = bilinear_resize(x, 3, 3).data[0, 0]
    assert out[1, 1] == pytest.approx(1.5)
    np.testing.assert_allclose(out, [[0.0, 0.5, 1.0], [1.0, 1.5, 2.0], [2.0, 2.5, 3.0]])


def test_concat_with_zero_channels(rng):
    a = Tensor(rng.normal(size=(2, 3, 4, 4)), requires_grad=True, dtype=np.float64)
    empty = Tensor(np.zeros((2, 0, 4, 4)), dtype=np.float64)
    out = concat_channels(a, empty)
    assert out.shape == (2, 3, 4, 4)
    np.testing.assert_array_equal(out.data, a.data)

    backward(reduce("sum", out))
    np.testing.assert_array_equal(a.grad, np.ones((2, 3, 4, 4)))
