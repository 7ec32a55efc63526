from reswcae.network import ConvolutionalDenoiser


class WCAEPlugin(ConvolutionalDenoiser):
    """Wavelet-conditioned autoencoder: res_wcae without the residual skips."""

    uses_wavelets = True
    uses_skips = False
