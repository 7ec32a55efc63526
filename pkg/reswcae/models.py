import math


class ReswcaeError(RuntimeError):
    """Base class for every error raised by reswcae."""


class ContractViolationError(ReswcaeError, ValueError):
    """An operation was called with arguments outside its precondition."""


class DimensionError(ContractViolationError):
    """Spatial sizes that cannot be reconciled."""


class ConfigurationError(ReswcaeError, ValueError):
    """Invalid or inconsistent configuration."""


class DatasetError(ReswcaeError):
    """The dataset cannot be loaded or partitioned."""


class DivergenceError(ReswcaeError):
    """Training produced a non-finite loss."""


class IncompatibleCheckpointError(ReswcaeError):
    """A checkpoint is missing, truncated, or does not match the expected format."""


class BaseArchitecturePlugin:
    """
    Base class for denoising architectures.

    Subclasses build their layers in `build_layers` and implement `forward_tensor`.
    Layers must be registered in declaration order through `add_layer`, which fixes
    the parameter order used by optimizers and checkpoints.

    Attributes:
        config (ModelConfig): The architecture configuration.
        layers (dict): Ordered mapping of layer name to layer object.
    """

    uses_wavelets = False
    uses_skips = False

    def __init__(self, config):
        """
        Initialize the architecture with a configuration.

        Args:
            config (ModelConfig): The architecture configuration.

        Returns:
            None
        """
        self.config = config
        self.layers = {}

    def add_layer(self, name, layer):
        if name in self.layers:
            raise ConfigurationError(f"Duplicate layer name '{name}'.")
        self.layers[name] = layer
        return layer

    def parameters(self):
        """
        Return every trainable tensor in declaration order.

        Returns:
            list: Tensors, each layer's kernel (or weight) followed by its bias.
        """
        params = []
        for layer in self.layers.values():
            params.extend(layer.parameters())
        return params

    def named_parameters(self):
        named = []
        for layer_name, layer in self.layers.items():
            for param_name, param in zip(("weight", "bias"), layer.parameters()):
                named.append((f"{layer_name}.{param_name}", param))
        return named

    def build_layers(self, rng, dtype):
        """
        Create all layers of the architecture.

        Args:
            rng (numpy.random.Generator): Source of initial weights.
            dtype (numpy.dtype): Parameter precision.

        Raises:
            NotImplementedError: If the method is called without being implemented by the plugin.
        """
        raise NotImplementedError("Plugin must implement the build_layers method.")

    def forward_tensor(self, x, wavelet_input=None, ablate_skips=False):
        """
        Run the network on a batch.

        Args:
            x (Tensor): Noisy images, N x 1 x H x W.
            wavelet_input (numpy.ndarray): Optional packed pyramids, N x 10 x h x w. Computed
                from `x` when omitted.
            ablate_skips (bool): Replace residual skip tensors by zeros.

        Raises:
            NotImplementedError: If the method is called without being implemented by the plugin.
        """
        raise NotImplementedError("Plugin must implement the forward_tensor method.")


class BaseOptimizerPlugin:
    """
    Base class for optimizers.

    Attributes:
        params (list): Tensors updated in place.
        learning_rate (float): Step size.
    """

    def __init__(self, params, learning_rate):
        """
        Initialize the optimizer over a list of parameters.

        Args:
            params (list): Tensors with `requires_grad` set.
            learning_rate (float): Step size, must be non-negative.

        Returns:
            None
        """
        if learning_rate < 0:
            raise ConfigurationError(f"learning_rate must be >= 0, got {learning_rate}.")
        self.params = list(params)
        self.learning_rate = learning_rate

    def step(self):
        """
        Apply one update using the gradients currently stored on the parameters.

        Raises:
            NotImplementedError: If the method is called without being implemented by the plugin.
        """
        raise NotImplementedError("Plugin must implement the step method.")

    def zero_grad(self):
        for param in self.params:
            param.zero_grad()


ARCHITECTURE_KINDS = ("dense_nn", "autoencoder", "wcae", "res_wcae")


class ModelConfig:
    """
    Architecture configuration.

    Attributes:
        kind (str): One of `ARCHITECTURE_KINDS`.
        image_encoder_filters (list): Output channels of the four stride-2 image encoder convolutions.
        wavelet_encoder_filters (list): Output channels of the three stride-1 wavelet encoder convolutions.
        decoder_filters (list): Output channels of the three transpose convolutions and the final convolution.
        wavelet_levels (int): Number of DWT levels K.
        wavelet (str): Name of the wavelet filter bank, or a path to a coefficient file.
        input_height (int): Image height.
        input_width (int): Image width.
        dense_hidden (list): Hidden widths of the dense baseline.
    """

    def __init__(
        self,
        kind="res_wcae",
        image_encoder_filters=(32, 64, 128, 256),
        wavelet_encoder_filters=(16, 32, 64),
        decoder_filters=(128, 64, 32, 1),
        wavelet_levels=3,
        wavelet="sym4",
        input_height=103,
        input_width=96,
        dense_hidden=(1024, 256, 1024),
    ):
        self.kind = kind
        self.image_encoder_filters = [int(f) for f in image_encoder_filters]
        self.wavelet_encoder_filters = [int(f) for f in wavelet_encoder_filters]
        self.decoder_filters = [int(f) for f in decoder_filters]
        self.wavelet_levels = int(wavelet_levels)
        self.wavelet = wavelet
        self.input_height = int(input_height)
        self.input_width = int(input_width)
        self.dense_hidden = [int(f) for f in dense_hidden]
        self.validate()

    def validate(self):
        if self.kind not in ARCHITECTURE_KINDS:
            raise ConfigurationError(
                f"Unknown model kind '{self.kind}', expected one of {', '.join(ARCHITECTURE_KINDS)}."
            )
        if len(self.image_encoder_filters) != 4:
            raise ConfigurationError("image_encoder_filters must list exactly 4 values.")
        if len(self.wavelet_encoder_filters) != 3:
            raise ConfigurationError("wavelet_encoder_filters must list exactly 3 values.")
        if len(self.decoder_filters) != 4 or self.decoder_filters[-1] != 1:
            raise ConfigurationError(
                "decoder_filters must list exactly 4 values, the last being 1."
            )
        if self.wavelet_levels < 1:
            raise ConfigurationError("wavelet_levels must be >= 1.")
        if self.input_height < 1 or self.input_width < 1:
            raise ConfigurationError("Input dimensions must be positive.")
        for value in (
            self.image_encoder_filters
            + self.wavelet_encoder_filters
            + self.decoder_filters
            + self.dense_hidden
        ):
            if value < 1:
                raise ConfigurationError("Filter counts and widths must be positive.")

    def to_dict(self):
        return {
            "kind": self.kind,
            "image_encoder_filters": list(self.image_encoder_filters),
            "wavelet_encoder_filters": list(self.wavelet_encoder_filters),
            "decoder_filters": list(self.decoder_filters),
            "wavelet_levels": self.wavelet_levels,
            "wavelet": self.wavelet,
            "input_height": self.input_height,
            "input_width": self.input_width,
            "dense_hidden": list(self.dense_hidden),
        }

    @classmethod
    def from_dict(cls, values):
        known = cls().to_dict().keys()
        unknown = set(values) - set(known)
        if unknown:
            raise ConfigurationError(f"Unknown model settings: {', '.join(sorted(unknown))}.")
        return cls(**values)

    def __eq__(self, other):
        return isinstance(other, ModelConfig) and self.to_dict() == other.to_dict()


class LossConfig:
    """
    Training objective settings.

    Attributes:
        lam (float): Weight of the KL-divergence term.
        epsilon (float): Floor added to every pixel before normalizing an image to a distribution.
    """

    def __init__(self, lam=1e-3, epsilon=1e-8):
        self.lam = float(lam)
        self.epsilon = float(epsilon)
        if self.lam < 0:
            raise ConfigurationError(f"lam must be >= 0, got {self.lam}.")
        if self.epsilon <= 0:
            raise ConfigurationError(f"epsilon must be > 0, got {self.epsilon}.")

    def to_dict(self):
        return {"lam": self.lam, "epsilon": self.epsilon}


class NoiseSpec:
    """
    Additive white Gaussian noise on the 0-255 intensity scale.

    Attributes:
        sigma (float): Standard deviation in 8-bit units.
        seed (int): Seed of the noise field.
        clip (bool): Clip the degraded image to [0, 1].
    """

    def __init__(self, sigma, seed=0, clip=True):
        self.sigma = float(sigma)
        self.seed = int(seed)
        self.clip = bool(clip)
        if self.sigma < 0 or not math.isfinite(self.sigma):
            raise ConfigurationError(f"sigma must be a finite value >= 0, got {sigma}.")


class TrainConfig:
    """
    Optimization settings.

    Attributes:
        batch_size (int): Images per mini-batch.
        learning_rate (float): Optimizer step size.
        max_epochs (int): Upper bound on passes over the training set.
        optimizer (str): Optimizer plugin name.
        sigma (float): Fixed training noise level, or None to draw per sample from [sigma_min, sigma_max].
        sigma_min (float): Lower bound of the training noise range.
        sigma_max (float): Upper bound of the training noise range.
        validation_sigma (float): Noise level of the validation pairs.
        clip (bool): Clip degraded images to [0, 1].
        seed (int): Seed for shuffling and noise.
        checkpoint_dir (str): Directory for `best.rwae`, or None to skip checkpointing.
    """

    def __init__(
        self,
        batch_size=32,
        learning_rate=0.001,
        max_epochs=200,
        optimizer="adam",
        sigma=None,
        sigma_min=100.0,
        sigma_max=200.0,
        validation_sigma=None,
        clip=True,
        seed=0,
        checkpoint_dir=None,
    ):
        self.batch_size = int(batch_size)
        self.learning_rate = float(learning_rate)
        self.max_epochs = int(max_epochs)
        self.optimizer = optimizer
        self.sigma = None if sigma is None else float(sigma)
        self.sigma_min = float(sigma_min)
        self.sigma_max = float(sigma_max)
        self.validation_sigma = validation_sigma
        self.clip = bool(clip)
        self.seed = int(seed)
        self.checkpoint_dir = checkpoint_dir
        self.validate()

    def validate(self):
        if self.batch_size < 1:
            raise ConfigurationError(f"batch_size must be >= 1, got {self.batch_size}.")
        if not self.learning_rate > 0:
            raise ConfigurationError(f"learning_rate must be > 0, got {self.learning_rate}.")
        if self.max_epochs < 1:
            raise ConfigurationError(f"max_epochs must be >= 1, got {self.max_epochs}.")
        if self.sigma is not None and self.sigma < 0:
            raise ConfigurationError(f"sigma must be >= 0, got {self.sigma}.")
        if not 0 <= self.sigma_min <= self.sigma_max:
            raise ConfigurationError(
                f"Noise range must satisfy 0 <= sigma_min <= sigma_max, got [{self.sigma_min}, {self.sigma_max}]."
            )

    def effective_validation_sigma(self):
        if self.validation_sigma is not None:
            return float(self.validation_sigma)
        if self.sigma is not None:
            return self.sigma
        return (self.sigma_min + self.sigma_max) / 2


class DatasetSplit:
    """
    A partition of a dataset into training, validation and test sets.

    Attributes:
        train (list): Training images.
        validation (list): Holdout validation images.
        test (list): Test images.
        ratios (tuple): The requested ratios.
        split_seed (int): Seed of the shuffle.
    """

    def __init__(self, train, validation, test, ratios=(70, 15, 15), split_seed=0):
        self.train = train
        self.validation = validation
        self.test = test
        self.ratios = tuple(ratios)
        self.split_seed = split_seed

    def sizes(self):
        return len(self.train), len(self.validation), len(self.test)


class TrainHistory:
    """
    Per-epoch training record.

    Attributes:
        train_loss (list): Mean training loss per epoch.
        val_loss (list): Validation loss per epoch.
        val_psnr (list): Mean validation PSNR per epoch.
        best_epoch (int): Index of the epoch with the lowest validation loss, or None before the first epoch.
    """

    def __init__(self, train_loss=None, val_loss=None, val_psnr=None, best_epoch=None):
        self.train_loss = list(train_loss or [])
        self.val_loss = list(val_loss or [])
        self.val_psnr = list(val_psnr or [])
        self.best_epoch = best_epoch

    def record(self, train_loss, val_loss, val_psnr):
        self.train_loss.append(float(train_loss))
        self.val_loss.append(float(val_loss))
        self.val_psnr.append(float(val_psnr))
        if self.best_epoch is None or val_loss < self.val_loss[self.best_epoch]:
            self.best_epoch = len(self.val_loss) - 1
            return True
        return False

    def __len__(self):
        return len(self.val_loss)

    def rows(self):
        for epoch, values in enumerate(zip(self.train_loss, self.val_loss, self.val_psnr)):
            yield (epoch,) + values

    def to_dict(self):
        return {
            "train_loss": self.train_loss,
            "val_loss": self.val_loss,
            "val_psnr": self.val_psnr,
            "best_epoch": self.best_epoch,
        }


class EvalRow:
    """
    Averaged metrics of one model at one noise level.

    Attributes:
        model (str): Row label, `noisy` for the degraded input itself.
        sigma (float): Noise level.
        psnr (float): Mean PSNR in dB (math.inf when every pair is identical).
        ssim (float): Mean SSIM.
        mse (float): Mean MSE.
        delta_psnr (float): psnr minus the noisy-image psnr at the same sigma.
    """

    def __init__(self, model, sigma, psnr, ssim, mse, delta_psnr):
        self.model = model
        self.sigma = sigma
        self.psnr = psnr
        self.ssim = ssim
        self.mse = mse
        self.delta_psnr = delta_psnr

    def as_tuple(self):
        return (self.model, self.sigma, self.psnr, self.ssim, self.mse, self.delta_psnr)


class EvalReport:
    """
    Per-sigma evaluation table.

    Attributes:
        sigmas (list): Evaluated noise levels.
        rows (list): EvalRow objects, noisy baseline row first for every sigma.
    """

    def __init__(self, sigmas, rows=None):
        self.sigmas = list(sigmas)
        self.rows = list(rows or [])

    def row(self, model, sigma):
        for row in self.rows:
            if row.model == model and row.sigma == sigma:
                return row
        raise KeyError(f"No row for model '{model}' at sigma {sigma}.")

    def models(self):
        seen = []
        for row in self.rows:
            if row.model not in seen:
                seen.append(row.model)
        return seen
