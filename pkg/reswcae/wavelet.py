"""
Multilevel 2D discrete wavelet analysis and synthesis in periodization mode.

An axis of length N is extended to an even length by repeating its last
sample and filtered with the PyWavelets periodization convention, so a level
of decomposition maps N to ceil(N/2) (103 -> 52 -> 26 -> 13). Synthesis
inverts the analysis exactly and crops back to the recorded size.
"""

import functools
import logging
import math
import re

import numpy as np
import pywt

from reswcae.layers import resize_array
from reswcae.models import ConfigurationError, DimensionError

PACKED_LEVELS = 3
PACKED_CHANNELS = 3 * PACKED_LEVELS + 1


class WaveletFilterBank:
    """
    Analysis and synthesis filters of an orthogonal wavelet.

    Attributes:
        name (str): Wavelet identifier.
        dec_lo (numpy.ndarray): Analysis low-pass filter.
        dec_hi (numpy.ndarray): Analysis high-pass filter.
        rec_lo (numpy.ndarray): Synthesis low-pass filter.
        rec_hi (numpy.ndarray): Synthesis high-pass filter.
    """

    def __init__(self, name, dec_lo, dec_hi, rec_lo, rec_hi):
        self.name = name
        self.dec_lo = np.asarray(dec_lo, dtype=np.float64)
        self.dec_hi = np.asarray(dec_hi, dtype=np.float64)
        self.rec_lo = np.asarray(rec_lo, dtype=np.float64)
        self.rec_hi = np.asarray(rec_hi, dtype=np.float64)

        lengths = {len(f) for f in (self.dec_lo, self.dec_hi, self.rec_lo, self.rec_hi)}
        if len(lengths) != 1 or self.filter_length < 2 or self.filter_length % 2:
            raise ConfigurationError(
                f"Filter bank '{name}' needs four filters of one even length, got lengths {sorted(lengths)}."
            )
        norm = float(np.linalg.norm(self.dec_lo))
        if abs(norm - 1.0) > 1e-6:
            raise ConfigurationError(
                f"Filter bank '{name}' is not orthonormal: ||dec_lo|| = {norm:.8f}."
            )

    @property
    def filter_length(self):
        return len(self.dec_lo)

    @classmethod
    def from_name(cls, name="sym4"):
        """
        Build a bank from the PyWavelets coefficient tables.

        Args:
            name (str): A discrete orthogonal wavelet name such as `sym4`, `db2` or `haar`.

        Returns:
            WaveletFilterBank: The filter bank.

        Raises:
            ConfigurationError: Unknown or non-orthogonal wavelet.
        """
        try:
            wavelet = pywt.Wavelet(name)
        except ValueError as e:
            raise ConfigurationError(f"Unknown wavelet '{name}'.") from e
        if not wavelet.orthogonal:
            raise ConfigurationError(f"Wavelet '{name}' is not orthogonal.")
        return cls(name, wavelet.dec_lo, wavelet.dec_hi, wavelet.rec_lo, wavelet.rec_hi)


def load_filter_bank(path):
    """
    Load a filter bank from a coefficient file.

    The file holds four non-comment lines, dec_lo, dec_hi, rec_lo and rec_hi, each a
    list of decimal floats separated by whitespace or commas. Lines starting with `#`
    are ignored.

    Args:
        path (str): Path to the coefficient file.

    Returns:
        WaveletFilterBank: The bank, named after the file.

    Raises:
        ConfigurationError: Malformed file.
    """
    filters = []
    with open(path, "r") as file:
        for line in file:
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            try:
                filters.append([float(v) for v in re.split(r"[\s,]+", line) if v])
            except ValueError as e:
                raise ConfigurationError(f"Bad coefficient in {path}: {line}") from e
    if len(filters) != 4:
        raise ConfigurationError(
            f"{path} must contain 4 filters (dec_lo, dec_hi, rec_lo, rec_hi), found {len(filters)}."
        )
    logging.debug(f"Loaded filter bank from {path} with {len(filters[0])} taps.")
    return WaveletFilterBank(str(path), *filters)


def resolve_filter_bank(name_or_path):
    if isinstance(name_or_path, WaveletFilterBank):
        return name_or_path
    if name_or_path in pywt.wavelist(kind="discrete"):
        return WaveletFilterBank.from_name(name_or_path)
    return load_filter_bank(name_or_path)


class WaveletPyramid:
    """
    A K-level decomposition: one approximation and three detail subimages per level.

    Attributes:
        approx (numpy.ndarray): Level-K approximation J_K.
        details (list): details[k-1] = (horizontal, vertical, diagonal) of level k.
        image_shape (tuple): Size of the decomposed image.
    """

    def __init__(self, approx, details, image_shape):
        self.approx = approx
        self.details = list(details)
        self.image_shape = tuple(image_shape)

    @property
    def levels(self):
        return len(self.details)

    def subimages(self):
        """All 3K+1 subimages, approximation first, then levels K..1."""
        images = [self.approx]
        for level in reversed(self.details):
            images.extend(level)
        return images

    def level_shape(self, k):
        height, width = self.image_shape
        return math.ceil(height / 2**k), math.ceil(width / 2**k)

    def validate(self):
        if self.levels < 1:
            raise DimensionError("A pyramid needs at least one level.")
        for k, bands in enumerate(self.details, start=1):
            expected = self.level_shape(k)
            if len(bands) != 3:
                raise DimensionError(f"Level {k} must hold 3 detail subimages, got {len(bands)}.")
            for band in bands:
                if band.shape != expected:
                    raise DimensionError(
                        f"Level {k} detail has shape {band.shape}, expected {expected}."
                    )
        if self.approx.shape != self.level_shape(self.levels):
            raise DimensionError(
                f"Approximation has shape {self.approx.shape}, expected {self.level_shape(self.levels)}."
            )


@functools.lru_cache(maxsize=64)
def _analysis_matrices(bank_key, dec_lo, dec_hi, length):
    """
    Low- and high-pass analysis matrices for one axis, including the even extension.

    Output o is sum_j f[j] * x_ext[(F/2 + 2o - j) mod N_ext].
    """
    extended = length + length % 2
    taps = len(dec_lo)
    half = extended // 2
    extension = np.zeros((extended, length))
    extension[np.arange(length), np.arange(length)] = 1
    if extended != length:
        extension[-1, -1] = 1

    lo = np.zeros((half, extended))
    hi = np.zeros((half, extended))
    for o in range(half):
        for j in range(taps):
            index = (taps // 2 + 2 * o - j) % extended
            lo[o, index] += dec_lo[j]
            hi[o, index] += dec_hi[j]
    return lo @ extension, hi @ extension


@functools.lru_cache(maxsize=64)
def _synthesis_matrices(bank_key, rec_lo, rec_hi, length):
    """Synthesis matrices for one axis, cropped to `length` samples."""
    extended = length + length % 2
    taps = len(rec_lo)
    half = extended // 2
    lo = np.zeros((extended, half))
    hi = np.zeros((extended, half))
    for o in range(half):
        for j in range(taps):
            index = (taps // 2 + 2 * o - j) % extended
            lo[index, o] += rec_lo[taps - 1 - j]
            hi[index, o] += rec_hi[taps - 1 - j]
    return lo[:length], hi[:length]


def _axis_analysis(bank, length):
    return _analysis_matrices(bank.name, tuple(bank.dec_lo), tuple(bank.dec_hi), length)


def _axis_synthesis(bank, length):
    return _synthesis_matrices(bank.name, tuple(bank.rec_lo), tuple(bank.rec_hi), length)


def dwt2(image, bank, levels):
    """
    Decompose an image into 3K+1 subimages.

    Args:
        image (numpy.ndarray): 2D image.
        bank (WaveletFilterBank): Orthogonal filter bank.
        levels (int): Number of levels K >= 1.

    Returns:
        WaveletPyramid: Subimages of level k sized ceil(H/2^k) x ceil(W/2^k).

    Raises:
        ConfigurationError: K < 1.
        DimensionError: The image is smaller than the filter at some level.
    """
    if levels < 1:
        raise ConfigurationError(f"Wavelet levels must be >= 1, got {levels}.")
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 2:
        raise DimensionError(f"dwt2 expects a 2D image, got shape {image.shape}.")

    current = image
    details = []
    for k in range(1, levels + 1):
        height, width = current.shape
        if min(height, width) < bank.filter_length:
            raise DimensionError(
                f"Level {k} input is {height}x{width}, smaller than the "
                f"{bank.filter_length}-tap '{bank.name}' filter (image {image.shape}, K={levels})."
            )
        row_lo, row_hi = _axis_analysis(bank, height)
        col_lo, col_hi = _axis_analysis(bank, width)
        low_rows = row_lo @ current
        high_rows = row_hi @ current
        approx = low_rows @ col_lo.T
        horizontal = high_rows @ col_lo.T
        vertical = low_rows @ col_hi.T
        diagonal = high_rows @ col_hi.T
        details.append((horizontal, vertical, diagonal))
        current = approx
    return WaveletPyramid(current, details, image.shape)


def idwt2(pyramid, bank):
    """
    Reconstruct an image from its pyramid.

    Args:
        pyramid (WaveletPyramid): Output of `dwt2`.
        bank (WaveletFilterBank): The bank used for the analysis.

    Returns:
        numpy.ndarray: Image of `pyramid.image_shape`.

    Raises:
        DimensionError: Subimage sizes inconsistent with the recorded image shape.
    """
    pyramid.validate()
    current = np.asarray(pyramid.approx, dtype=np.float64)
    for k in range(pyramid.levels, 0, -1):
        height, width = pyramid.level_shape(k - 1)
        horizontal, vertical, diagonal = pyramid.details[k - 1]
        row_lo, row_hi = _axis_synthesis(bank, height)
        col_lo, col_hi = _axis_synthesis(bank, width)
        current = (
            row_lo @ current @ col_lo.T
            + row_hi @ horizontal @ col_lo.T
            + row_lo @ vertical @ col_hi.T
            + row_hi @ diagonal @ col_hi.T
        )
    return current


def pack_pyramid(pyramid, target_h, target_w):
    """
    Stack a 3-level pyramid into a 10-channel array on one grid.

    Channel order is fixed: [approx, j_3^1, j_3^2, j_3^3, j_2^1, j_2^2, j_2^3,
    j_1^1, j_1^2, j_1^3], where ^1/^2/^3 are horizontal, vertical and diagonal
    details. Subimages are bilinearly resized (align-corners) to the target grid.

    Args:
        pyramid (WaveletPyramid): A 3-level pyramid.
        target_h (int): Grid height.
        target_w (int): Grid width.

    Returns:
        numpy.ndarray: 10 x target_h x target_w array.

    Raises:
        ConfigurationError: The pyramid does not have exactly 3 levels.
    """
    if pyramid.levels != PACKED_LEVELS:
        raise ConfigurationError(
            f"pack_pyramid needs a {PACKED_LEVELS}-level pyramid, got K={pyramid.levels}."
        )
    channels = [resize_array(band, target_h, target_w) for band in pyramid.subimages()]
    return np.stack(channels)


def pack_images(images, bank, levels, target_h, target_w, dtype=np.float32):
    """Decompose and pack a batch of N x H x W images into N x 10 x target_h x target_w."""
    packed = [pack_pyramid(dwt2(image, bank, levels), target_h, target_w) for image in images]
    return np.stack(packed).astype(dtype)
