"""Degradation model, dataset loading and splitting, synthetic fingerprints and image I/O."""

import logging
import math
from pathlib import Path

import cv2
import numpy as np
from scipy.ndimage import gaussian_filter, map_coordinates

from reswcae.models import (
    ConfigurationError,
    ContractViolationError,
    DatasetError,
    DatasetSplit,
)

IMAGE_HEIGHT = 103
IMAGE_WIDTH = 96
IMAGE_SUFFIXES = (".bmp", ".pgm")
INTENSITY_SCALE = 255.0


def sample_noise(shape, spec):
    """
    The pre-clip noise field of `spec` on the normalized scale.

    Args:
        shape (tuple): Field shape.
        spec (NoiseSpec): Noise level (0-255 scale) and seed.

    Returns:
        numpy.ndarray: Independent N(0, (sigma/255)^2) samples.
    """
    rng = np.random.default_rng(spec.seed)
    return rng.normal(0.0, spec.sigma / INTENSITY_SCALE, size=shape)


def add_awgn(image, spec):
    """
    Degrade an image with additive white Gaussian noise, J = I + eps.

    Args:
        image (numpy.ndarray): Clean image in [0, 1].
        spec (NoiseSpec): Noise level, seed and clipping mode.

    Returns:
        numpy.ndarray: Noisy image of the same dtype, clipped to [0, 1] when `spec.clip`.
    """
    image = np.asarray(image)
    if spec.sigma == 0:
        return image.copy()
    noisy = image + sample_noise(image.shape, spec)
    if spec.clip:
        noisy = np.clip(noisy, 0.0, 1.0)
    return noisy.astype(image.dtype, copy=False)


def read_image(path, height=IMAGE_HEIGHT, width=IMAGE_WIDTH):
    """
    Read an 8-bit grayscale BMP or PGM and normalize it to [0, 1].

    Images of another size are resized bilinearly, with a warning.

    Args:
        path (str): Image file.
        height (int): Expected height, or None to keep the stored size.
        width (int): Expected width, or None to keep the stored size.

    Returns:
        numpy.ndarray: float32 image.

    Raises:
        DatasetError: The file cannot be decoded.
    """
    pixels = cv2.imread(str(path), cv2.IMREAD_GRAYSCALE)
    if pixels is None:
        raise DatasetError(f"Could not read image {path}.")
    if height is not None and width is not None and pixels.shape != (height, width):
        logging.warning(
            f"{path} is {pixels.shape[0]}x{pixels.shape[1]}, resizing to {height}x{width}."
        )
        pixels = cv2.resize(pixels, (width, height), interpolation=cv2.INTER_LINEAR)
    return (pixels.astype(np.float32) / INTENSITY_SCALE).astype(np.float32)


def list_image_files(path):
    directory = Path(path)
    if not directory.is_dir():
        raise DatasetError(f"Dataset directory {path} does not exist.")
    return sorted(
        (p for p in directory.iterdir() if p.is_file() and p.suffix.lower() in IMAGE_SUFFIXES),
        key=lambda p: p.name,
    )


def load_named_images(path, height=IMAGE_HEIGHT, width=IMAGE_WIDTH):
    """
    Load every readable image of a directory with its file name.

    Returns:
        list: (name, image) pairs in lexicographic file-name order.

    Raises:
        DatasetError: No readable image in the directory.
    """
    named = []
    for file in list_image_files(path):
        try:
            named.append((file.name, read_image(file, height, width)))
        except DatasetError:
            logging.warning(f"Skipping unreadable image {file}.")
    if not named:
        raise DatasetError(f"No readable .bmp or .pgm images in {path}.")
    logging.info(f"Loaded {len(named)} images from {path}.")
    return named


def load_dataset(path, height=IMAGE_HEIGHT, width=IMAGE_WIDTH):
    """
    Load a SOCOFing-format directory of 8-bit grayscale fingerprints.

    Args:
        path (str): Directory of .bmp / .pgm files.
        height (int): Target height.
        width (int): Target width.

    Returns:
        list: Normalized images, sorted by file name.

    Raises:
        DatasetError: Missing or empty directory.
    """
    return [image for _, image in load_named_images(path, height, width)]


def split_dataset(images, ratios=(70, 15, 15), seed=0):
    """
    Shuffle with a seed and partition into train/validation/test.

    Validation and test sizes are floor(n * ratio / total), at least one image each
    when their ratio is positive; the remainder goes to training.

    Args:
        images (list): The full dataset.
        ratios (tuple): Train, validation and test weights.
        seed (int): Shuffle seed.

    Returns:
        DatasetSplit: A disjoint, exhaustive partition.

    Raises:
        ConfigurationError: Malformed ratios.
        DatasetError: Fewer images than partitions.
    """
    ratios = tuple(float(r) for r in ratios)
    if len(ratios) != 3 or min(ratios) < 0 or sum(ratios) <= 0:
        raise ConfigurationError(f"Split ratios must be three non-negative weights, got {ratios}.")
    count = len(images)
    if count < 3:
        raise DatasetError(f"Need at least 3 images to split, got {count}.")

    total = sum(ratios)
    sizes = []
    for ratio in ratios[1:]:
        size = math.floor(count * ratio / total)
        if ratio > 0:
            size = max(size, 1)
        sizes.append(size)
    n_validation, n_test = sizes
    n_train = count - n_validation - n_test

    order = np.random.default_rng(seed).permutation(count)
    train = [images[i] for i in order[:n_train]]
    validation = [images[i] for i in order[n_train : n_train + n_validation]]
    test = [images[i] for i in order[n_train + n_validation :]]
    logging.debug(f"Split {count} images into {n_train}/{n_validation}/{n_test}.")
    return DatasetSplit(train, validation, test, ratios=ratios, split_seed=seed)


def _ridge_potential(rng, yy, xx, height, width):
    """A scalar field whose level sets are the ridge lines; |grad| stays close to 1."""
    pattern = rng.choice(("whorl", "loop", "arch"))
    core_y = height * rng.uniform(0.35, 0.6)
    core_x = width * rng.uniform(0.4, 0.6)
    dy, dx = yy - core_y, xx - core_x
    if pattern == "whorl":
        return np.hypot(dy, dx)
    if pattern == "loop":
        return np.where(dy < 0, np.hypot(dy, dx), np.abs(dx))
    amplitude = rng.uniform(8.0, 14.0)
    spread = rng.uniform(25.0, 40.0)
    return yy - amplitude * np.exp(-((dx / spread) ** 2))


def _smooth_field(rng, shape, sigma, scale):
    field = gaussian_filter(rng.normal(size=shape), sigma)
    return scale * field / (field.std() + 1e-12)


def synth_fingerprint(seed, height=IMAGE_HEIGHT, width=IMAGE_WIDTH):
    """
    Generate a procedural fingerprint-like image.

    Dark sinusoidal ridges with a 4.5-6 px period follow the level sets of a whorl,
    loop or arch potential perturbed by a smooth warp. Ridges carry a mild texture,
    are blurred along their own direction, and sit inside a soft elliptical finger
    mask on a white background. The result is contrast-normalized to [0, 1].

    Args:
        seed (int): Generator seed; equal seeds give identical images.
        height (int): Image height, at least 32.
        width (int): Image width, at least 32.

    Returns:
        numpy.ndarray: float32 image.
    """
    if height < 32 or width < 32:
        raise ContractViolationError(
            f"Synthetic fingerprints need at least 32x32 pixels, got {height}x{width}."
        )
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:height, 0:width].astype(np.float64)

    potential = _ridge_potential(rng, yy, xx, height, width)
    potential = potential + _smooth_field(rng, (height, width), 12.0, rng.uniform(1.0, 2.5))
    period = rng.uniform(4.5, 6.0)
    ridges = 0.5 + 0.5 * np.cos(2 * np.pi * potential / period + rng.uniform(0, 2 * np.pi))
    ridges = ridges + _smooth_field(rng, (height, width), 1.0, 0.15)

    grad_y, grad_x = np.gradient(potential)
    norm = np.hypot(grad_y, grad_x) + 1e-12
    tangent_y, tangent_x = -grad_x / norm, grad_y / norm
    blurred = np.zeros_like(ridges)
    weights = 0.0
    for step in (-2, -1, 0, 1, 2):
        weight = math.exp(-(step**2) / (2 * 1.2**2))
        coords = [yy + step * tangent_y, xx + step * tangent_x]
        blurred += weight * map_coordinates(ridges, coords, order=1, mode="reflect")
        weights += weight
    ridges = np.clip(blurred / weights, 0.0, 1.0)

    center_y = height * (0.5 + rng.uniform(-0.03, 0.03))
    center_x = width * (0.5 + rng.uniform(-0.03, 0.03))
    radius = np.hypot(
        (yy - center_y) / (height * rng.uniform(0.44, 0.48)),
        (xx - center_x) / (width * rng.uniform(0.42, 0.47)),
    )
    mask = np.clip((1.0 - radius) / 0.08, 0.0, 1.0)

    image = 1.0 - mask * ridges
    low, high = image.min(), image.max()
    image = (image - low) / max(high - low, 1e-12)
    return image.astype(np.float32)


def synth_dataset(count, seed=0, height=IMAGE_HEIGHT, width=IMAGE_WIDTH):
    """`count` synthetic fingerprints with seeds seed, seed+1, ..."""
    return [synth_fingerprint(seed + i, height, width) for i in range(count)]


def to_uint8(image):
    return np.round(np.clip(image, 0.0, 1.0) * INTENSITY_SCALE).astype(np.uint8)


def write_pgm(path, image):
    """
    Write a [0, 1] image as an 8-bit binary PGM.

    Raises:
        OSError: The file could not be written.
    """
    if not cv2.imwrite(str(path), to_uint8(image)):
        raise OSError(f"Could not write {path}.")


def make_triptych(*images):
    """Concatenate equally sized images left to right."""
    heights = {image.shape[0] for image in images}
    if len(heights) != 1:
        raise ContractViolationError(f"Triptych images differ in height: {sorted(heights)}.")
    return np.hstack(images)
