"""
Model assembly: architecture plugins, the shared convolutional stacks, and the
forward-pass contract (noisy image in, denoised image out).
"""

import logging
import math

import numpy as np

from reswcae import utils
from reswcae.autodiff import Tensor, elementwise, no_grad
from reswcae.layers import (
    ConvLayer,
    bilinear_resize,
    concat_channels,
    conv2d,
    conv2d_transpose,
)
from reswcae.models import (
    BaseArchitecturePlugin,
    ConfigurationError,
    DimensionError,
    ReswcaeError,
)
from reswcae.wavelet import PACKED_CHANNELS, pack_images, resolve_filter_bank


class ConvolutionalDenoiser(BaseArchitecturePlugin):
    """
    Image encoder and decoder, optionally conditioned on a wavelet encoder and
    optionally joined by residual skips.

    The image encoder is four stride-2 convolutions (y1..y4). The wavelet encoder is
    three stride-1 convolutions over the 10-channel packed pyramid on the level-K grid,
    resized to the bottleneck grid and concatenated to y4 (the condition layer). The
    decoder stages 3, 2, 1 are stride-2 transpose convolutions targeted at the sizes of
    y3, y2, y1; with skips each stage output is concatenated with that encoder map. A
    bilinear resize to the input size and a 3x3 convolution with a sigmoid finish.
    """

    def build_layers(self, rng, dtype):
        config = self.config
        encoder = config.image_encoder_filters
        decoder = config.decoder_filters

        channels = 1
        for index, filters in enumerate(encoder, start=1):
            self.add_layer(
                f"image_encoder.{index}", ConvLayer(channels, filters, 2, "down", rng, dtype)
            )
            channels = filters

        if self.uses_wavelets:
            self.bank = resolve_filter_bank(config.wavelet)
            wavelet_channels = PACKED_CHANNELS
            for index, filters in enumerate(config.wavelet_encoder_filters, start=1):
                self.add_layer(
                    f"wavelet_encoder.{index}",
                    ConvLayer(wavelet_channels, filters, 1, "down", rng, dtype),
                )
                wavelet_channels = filters
            channels += wavelet_channels

        skips = list(reversed(encoder[:3]))
        for stage, filters, skip in zip((3, 2, 1), decoder[:3], skips):
            self.add_layer(
                f"decoder.{stage}", ConvLayer(channels, filters, 2, "transpose", rng, dtype)
            )
            channels = filters + (skip if self.uses_skips else 0)
        self.add_layer("decoder.output", ConvLayer(channels, decoder[3], 1, "down", rng, dtype))

    def stack(self, prefix):
        return [layer for name, layer in self.layers.items() if name.startswith(prefix + ".")]

    def wavelet_grid(self):
        levels = self.config.wavelet_levels
        return (
            math.ceil(self.config.input_height / 2**levels),
            math.ceil(self.config.input_width / 2**levels),
        )

    def shape_plan(self):
        """
        Trace spatial sizes through every layer without running it.

        Returns:
            list: (layer name, (C, H, W) output) pairs in execution order.

        Raises:
            ConfigurationError: A layer's sizes cannot be reconciled; the message names it.
        """
        height, width = self.config.input_height, self.config.input_width
        plan = []
        encoder_sizes = []
        h, w = height, width
        for name, layer in self.layers.items():
            if name.startswith("image_encoder."):
                h, w = layer.output_size(h, w)
                if min(h, w) < 1:
                    raise ConfigurationError(f"Layer {name} produces an empty map.")
                encoder_sizes.append((layer.out_channels, h, w))
                plan.append((name, (layer.out_channels, h, w)))

        if self.uses_wavelets:
            levels = self.config.wavelet_levels
            for k in range(levels):
                size = min(math.ceil(height / 2**k), math.ceil(width / 2**k))
                if size < self.bank.filter_length:
                    raise ConfigurationError(
                        f"Layer wavelet_encoder.1 cannot be fed: level {k + 1} input is smaller "
                        f"than the {self.bank.filter_length}-tap '{self.bank.name}' filter."
                    )
            if levels != 3:
                raise ConfigurationError(
                    f"Layer wavelet_encoder.1 expects a 3-level pyramid, configured K={levels}."
                )
            grid = self.wavelet_grid()
            for layer_name, layer in self.layers.items():
                if layer_name.startswith("wavelet_encoder."):
                    plan.append((layer_name, (layer.out_channels,) + grid))

        targets = [size[1:] for size in reversed(encoder_sizes[:3])]
        h, w = encoder_sizes[-1][1:]
        for stage, (target_h, target_w) in zip((3, 2, 1), targets):
            name = f"decoder.{stage}"
            layer = self.layers[name]
            for size, target in ((h, target_h), (w, target_w)):
                if not 2 * size - 2 <= target <= 2 * size + 2:
                    raise ConfigurationError(
                        f"Layer {name} cannot upsample {size} to {target}."
                    )
            h, w = target_h, target_w
            plan.append((name, (layer.out_channels, h, w)))
        plan.append(("decoder.output", (self.layers["decoder.output"].out_channels, height, width)))
        return plan

    def wavelet_features(self, images):
        """Packed pyramids of a N x H x W batch on the level-K grid."""
        grid_h, grid_w = self.wavelet_grid()
        return pack_images(images, self.bank, self.config.wavelet_levels, grid_h, grid_w, self.dtype)

    def forward_tensor(self, x, wavelet_input=None, ablate_skips=False):
        encoded = []
        y = x
        for layer in self.stack("image_encoder"):
            y = elementwise("relu", conv2d(layer, y))
            encoded.append(y)

        condition = encoded[-1]
        if self.uses_wavelets:
            if wavelet_input is None:
                wavelet_input = self.wavelet_features(x.data[:, 0])
            z = Tensor(wavelet_input, dtype=x.dtype)
            for layer in self.stack("wavelet_encoder"):
                z = elementwise("relu", conv2d(layer, z))
            z = bilinear_resize(z, condition.shape[2], condition.shape[3])
            condition = concat_channels(condition, z)

        d = condition
        for stage, skip in zip((3, 2, 1), reversed(encoded[:3])):
            d = conv2d_transpose(self.layers[f"decoder.{stage}"], d, skip.shape[2], skip.shape[3])
            d = elementwise("relu", d)
            if self.uses_skips:
                if ablate_skips:
                    skip = Tensor(np.zeros(skip.shape, dtype=skip.dtype))
                d = concat_channels(d, skip)

        d = bilinear_resize(d, x.shape[2], x.shape[3])
        return elementwise("sigmoid", conv2d(self.layers["decoder.output"], d))


def build(config, seed=0, dtype=np.float32):
    """
    Construct a model with deterministic initial parameters.

    Args:
        config (ModelConfig): Architecture configuration; `kind` selects the plugin.
        seed (int): Initialization seed.
        dtype (numpy.dtype): Parameter precision.

    Returns:
        BaseArchitecturePlugin: The built model.

    Raises:
        ConfigurationError: Unknown kind, or shapes that cannot be reconciled (the message names the layer).
    """
    config.validate()
    plugin_class = utils.load_plugin("architectures", config.kind)
    model = plugin_class(config)
    model.seed = seed
    model.dtype = np.dtype(dtype)
    try:
        model.build_layers(np.random.default_rng(seed), model.dtype)
    except ReswcaeError as e:
        if isinstance(e, ConfigurationError):
            raise
        raise ConfigurationError(f"Cannot build {config.kind}: {e}") from e

    plan = model.shape_plan()
    for name, shape in plan:
        logging.debug(f"{config.kind} {name}: {shape}")
    logging.info(f"Built {config.kind} with {param_count(model)} parameters (seed {seed}).")
    return model


def _as_batch(model, noisy):
    images = np.asarray(getattr(noisy, "data", noisy))
    single = images.ndim == 2
    if single:
        images = images[None]
    if images.ndim == 4 and images.shape[1] == 1:
        images = images[:, 0]
    expected = (model.config.input_height, model.config.input_width)
    if images.ndim != 3 or images.shape[1:] != expected:
        raise DimensionError(
            f"{model.config.kind} expects {expected[0]}x{expected[1]} images, got shape {np.shape(noisy)}."
        )
    return images, single


def to_input_tensor(model, images):
    """Wrap an N x H x W batch as the N x 1 x H x W tensor the architectures consume."""
    return Tensor(np.asarray(images)[:, None], dtype=model.dtype)


def forward(model, noisy, wavelet_input=None, ablate_skips=False):
    """
    Denoise one image or a batch.

    Args:
        model (BaseArchitecturePlugin): A built model.
        noisy (numpy.ndarray): H x W image or N x H x W batch in [0, 1].
        wavelet_input (numpy.ndarray): Optional N x 10 x h x w packed pyramids replacing the
            ones computed from `noisy`.
        ablate_skips (bool): Replace residual skip tensors by zeros.

    Returns:
        numpy.ndarray: Denoised output in [0, 1] with the shape of `noisy`.

    Raises:
        DimensionError: Input size differs from the configured size.
    """
    images, single = _as_batch(model, noisy)
    with no_grad():
        out = model.forward_tensor(
            to_input_tensor(model, images), wavelet_input=wavelet_input, ablate_skips=ablate_skips
        )
    result = out.numpy()[:, 0]
    return result[0] if single else result


def param_count(model):
    """Number of scalar trainable parameters."""
    return int(sum(param.size for param in model.parameters()))
