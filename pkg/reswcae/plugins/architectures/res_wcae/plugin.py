from reswcae.network import ConvolutionalDenoiser


class ResWCAEPlugin(ConvolutionalDenoiser):
    """
    Residual wavelet-conditioned convolutional autoencoder.

    The bottleneck is conditioned on the wavelet encoder and every decoder stage is
    concatenated with the image-encoder map of the same size.
    """

    uses_wavelets = True
    uses_skips = True
