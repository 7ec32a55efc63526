"""Training objective and image quality metrics."""

import math

import numpy as np
from skimage.metrics import mean_squared_error, peak_signal_noise_ratio
from skimage.metrics import structural_similarity as skimage_ssim

from reswcae.autodiff import Tensor, as_tensor, elementwise, reduce
from reswcae.models import ContractViolationError

SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03
# window width scikit-image derives from sigma 1.5 (truncate 3.5)
SSIM_WINDOW = 11


def _as_batch(array):
    """View single images as a batch of one; arrays with ndim >= 3 are already batched."""
    if array.ndim >= 3:
        return array.reshape(array.shape[0], -1)
    return array.reshape(1, -1)


def _distribution(flat, epsilon):
    floored = flat + epsilon
    return floored / floored.sum(axis=1, keepdims=True), floored.sum(axis=1, keepdims=True)


def kl_divergence_array(output, clean, epsilon=1e-8):
    """
    D_KL(p_output || p_clean) per sample, each image flattened to a pixel distribution.

    Args:
        output (numpy.ndarray): An image or a batch of images.
        clean (numpy.ndarray): Same shape as `output`.
        epsilon (float): Floor added to every pixel before normalizing.

    Returns:
        numpy.ndarray: One divergence per sample.
    """
    p, _ = _distribution(_as_batch(np.asarray(output, dtype=np.float64)), epsilon)
    q, _ = _distribution(_as_batch(np.asarray(clean, dtype=np.float64)), epsilon)
    return np.sum(p * (np.log(p) - np.log(q)), axis=1)


def kl_divergence(output, clean, epsilon=1e-8):
    """
    Differentiable per-sample D_KL(p_output || p_clean); the clean image is a constant.

    Args:
        output (Tensor): An image or a batch of images.
        clean (numpy.ndarray or Tensor): Same shape as `output`.
        epsilon (float): Floor added to every pixel before normalizing.

    Returns:
        Tensor: Vector of one divergence per sample.
    """
    shape = output.shape
    flat = _as_batch(output.data)
    clean_flat = _as_batch(np.asarray(getattr(clean, "data", clean), dtype=output.dtype))
    p, total = _distribution(flat, epsilon)
    q, _ = _distribution(clean_flat, epsilon)
    log_ratio = np.log(p) - np.log(q)
    divergence = np.sum(p * log_ratio, axis=1)

    def backward_fn(grad):
        local = (log_ratio - divergence[:, None]) / total
        return ((grad[:, None] * local).reshape(shape),)

    return Tensor._from_op(divergence.astype(output.dtype), (output,), backward_fn, "kl_divergence")


def loss(output, clean, cfg):
    """
    Regularized reconstruction objective.

    The batch mean of ||output - clean||^2 + lam * D_KL(p_output || p_clean), where p_x is
    the image flattened to a distribution, p_x = (x + eps) / sum(x + eps).

    Args:
        output (Tensor): Model output, an image or an N x ... batch.
        clean (numpy.ndarray or Tensor): Clean targets of the same shape.
        cfg (LossConfig): lam and epsilon.

    Returns:
        Tensor: Scalar loss.

    Raises:
        ContractViolationError: Shape mismatch or non-finite values.
    """
    output = as_tensor(output)
    clean = as_tensor(clean, dtype=output.dtype)
    if output.shape != clean.shape:
        raise ContractViolationError(
            f"loss shape mismatch: output {output.shape} vs clean {clean.shape}."
        )
    if not (np.all(np.isfinite(output.data)) and np.all(np.isfinite(clean.data))):
        raise ContractViolationError("loss received non-finite values.")

    batch = output.shape[0] if output.ndim >= 3 else 1
    squared = reduce("sum", elementwise("square", elementwise("sub", output, clean)))
    total = squared
    if cfg.lam > 0:
        divergence = reduce("sum", kl_divergence(output, clean, cfg.epsilon))
        total = elementwise("add", squared, elementwise("mul", divergence, cfg.lam))
    return elementwise("mul", total, 1.0 / batch)


def _check_pair(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ContractViolationError(f"Metric shape mismatch: {a.shape} vs {b.shape}.")
    return a, b


def mse(a, b):
    """Mean squared difference."""
    a, b = _check_pair(a, b)
    return float(mean_squared_error(a, b))


def psnr(a, b, max_value=1.0):
    """
    Peak signal-to-noise ratio in dB, 10 log10(MAX^2 / MSE).

    Returns:
        float: math.inf when the images are identical.
    """
    a, b = _check_pair(a, b)
    if not np.any(a != b):
        return math.inf
    return float(peak_signal_noise_ratio(a, b, data_range=max_value))


class SimilarityResult:
    """
    SSIM value with metadata.

    Attributes:
        value (float): Mean local SSIM.
        truncated_window (bool): The image was smaller than the 11x11 window, so it was
            symmetrically padded up to the window size before scoring.
    """

    def __init__(self, value, truncated_window):
        self.value = value
        self.truncated_window = truncated_window

    def __float__(self):
        return float(self.value)


def _pad_to_window(image):
    extra = [max(SSIM_WINDOW - size, 0) for size in image.shape]
    return np.pad(image, [(n // 2, n - n // 2) for n in extra], mode="symmetric")


def structural_similarity(a, b, data_range=1.0):
    """
    Mean SSIM with an 11x11 Gaussian window (sigma 1.5), C1 = (0.01 L)^2, C2 = (0.03 L)^2.

    Local statistics are Gaussian-weighted population moments; the map is averaged over
    positions whose window lies fully inside the image.

    Args:
        a (numpy.ndarray): 2D image.
        b (numpy.ndarray): 2D image of the same shape.
        data_range (float): Dynamic range L.

    Returns:
        SimilarityResult: The score and whether the window had to be truncated.
    """
    a, b = _check_pair(a, b)
    truncated = min(a.shape) < SSIM_WINDOW
    if truncated:
        a, b = _pad_to_window(a), _pad_to_window(b)
    value = skimage_ssim(
        a,
        b,
        gaussian_weights=True,
        sigma=SSIM_SIGMA,
        use_sample_covariance=False,
        K1=SSIM_K1,
        K2=SSIM_K2,
        data_range=data_range,
    )
    return SimilarityResult(float(value), truncated)


def ssim(a, b):
    """Mean SSIM of two images with unit dynamic range."""
    return structural_similarity(a, b).value
