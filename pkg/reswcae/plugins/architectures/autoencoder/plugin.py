from reswcae.network import ConvolutionalDenoiser


class AutoencoderPlugin(ConvolutionalDenoiser):
    """Plain convolutional autoencoder: image encoder and decoder only."""

    uses_wavelets = False
    uses_skips = False
