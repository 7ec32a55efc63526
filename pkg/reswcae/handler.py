import logging
import os
from pathlib import Path

import yaml

from reswcae import data, network, training, utils
from reswcae.losses import psnr
from reswcae.models import (
    ARCHITECTURE_KINDS,
    ConfigurationError,
    ContractViolationError,
    DatasetError,
    DivergenceError,
    IncompatibleCheckpointError,
    LossConfig,
    ModelConfig,
    NoiseSpec,
    TrainConfig,
)

EXIT_OK = 0
EXIT_CONFIGURATION = 2
EXIT_DIVERGENCE = 3
EXIT_INCOMPATIBLE = 4

RESOLVED_CONFIG_NAME = "resolved_config.yaml"


def resolve_config(config_path=None, overrides=None, environ=None):
    """
    Resolve the effective configuration.

    Precedence, lowest first: built-in defaults, the YAML config file, RESWCAE__ environment
    variables, then `overrides` (the command-line flags).

    Args:
        config_path (str): Optional path to a config.yaml file.
        overrides (dict): Section/key values from the command line; None values are ignored.
        environ (dict): Environment to read, `os.environ` by default.

    Returns:
        dict: The full config dictionary.

    Raises:
        ConfigurationError: Unreadable file, unknown sections or keys, missing `env:` variables.
    """
    config = utils.merge_config(utils.DEFAULT_CONFIG, utils.load_config_file(config_path))
    config = utils.merge_config(config, utils.config_from_environment(environ))
    return utils.merge_config(config, overrides)


def model_config(config):
    return ModelConfig.from_dict(config["model"])


def requested_model_config(config):
    """
    The model a loaded checkpoint must match, or None when the `model` section is untouched.

    A `model` section that differs from the defaults was set by the user (file,
    environment or flags), and a checkpoint of any other architecture is rejected.
    """
    if config["model"] == utils.DEFAULT_CONFIG["model"]:
        return None
    return model_config(config)


def loss_config(config):
    return LossConfig(**config["loss"])


def train_config(config, checkpoint_dir=None):
    noise = config["noise"]
    options = config["training"]
    return TrainConfig(
        batch_size=options["batch_size"],
        learning_rate=options["learning_rate"],
        max_epochs=options["max_epochs"],
        optimizer=options["optimizer"],
        sigma=noise["sigma"],
        sigma_min=noise["sigma_min"],
        sigma_max=noise["sigma_max"],
        validation_sigma=options["validation_sigma"],
        clip=noise["clip"],
        seed=config["reswcae"]["seed"],
        checkpoint_dir=checkpoint_dir,
    )


def validate_config(config):
    """
    Construct every settings object once so bad values fail before any work starts.

    Evaluation sigmas are normalized to floats in place; YAML reads `1e2` as a string.
    """
    level = str(config["reswcae"]["log_level"]).upper()
    if not isinstance(getattr(logging, level, None), int):
        raise ConfigurationError(f"Unknown log level '{config['reswcae']['log_level']}'.")
    try:
        model_config(config)
        loss_config(config)
        train_config(config)
        sigmas = [float(sigma) for sigma in _as_list(config["evaluation"]["sigmas"])]
    except ConfigurationError:
        raise
    except (TypeError, ValueError) as e:
        raise ConfigurationError(f"Invalid configuration value: {e}") from e
    if not sigmas:
        raise ConfigurationError("evaluation.sigmas must list at least one noise level.")
    for sigma in sigmas:
        NoiseSpec(sigma)
    config["evaluation"]["sigmas"] = sigmas


def _as_list(value):
    return value if isinstance(value, list) else [value]


def load_split(config, height, width):
    """
    The images named by the `data` section, partitioned with the configured ratios.

    A positive `data.synthetic` count takes precedence over `data.dataset_path`.
    """
    options = config["data"]
    if options["synthetic"]:
        count = int(options["synthetic"])
        logging.info(f"Generating {count} synthetic fingerprints.")
        images = data.synth_dataset(count, seed=config["reswcae"]["seed"], height=height, width=width)
    elif options["dataset_path"]:
        images = data.load_dataset(options["dataset_path"], height, width)
    else:
        raise ConfigurationError("Set data.dataset_path (--data) or data.synthetic (--synthetic).")
    split = data.split_dataset(images, options["ratios"], options["split_seed"])
    n_train, n_validation, n_test = split.sizes()
    logging.info(f"Split into {n_train} train / {n_validation} validation / {n_test} test images.")
    return split


def cmd_train(config, out_dir):
    model_cfg = model_config(config)
    split = load_split(config, model_cfg.input_height, model_cfg.input_width)
    model = network.build(model_cfg, seed=config["reswcae"]["seed"])
    history_path = out_dir / "history.csv"
    try:
        _, history = training.train(model, split, train_config(config, str(out_dir)), loss_config(config))
    except DivergenceError as e:
        if getattr(e, "history", None) is not None:
            training.write_history_csv(e.history, history_path)
        raise
    training.write_history_csv(history, history_path)
    logging.info(f"Wrote {out_dir / training.CHECKPOINT_NAME} and {history_path}.")


def cmd_evaluate(config, out_dir, checkpoint):
    model = training.load_checkpoint(checkpoint, expected_config=requested_model_config(config))
    split = load_split(config, model.config.input_height, model.config.input_width)
    report = training.evaluate(
        model,
        split.test,
        _as_list(config["evaluation"]["sigmas"]),
        clip=config["noise"]["clip"],
        seed=config["noise"]["seed"],
    )
    path = out_dir / "eval.csv"
    training.write_eval_csv(report, path)
    logging.info(f"Wrote {path}.")


def cmd_compare(config, out_dir, sigma=None):
    """Train every architecture on one split with shared seeds and score them at a single sigma."""
    base = model_config(config).to_dict()
    split = load_split(config, base["input_height"], base["input_width"])
    train_cfg = train_config(config)
    sigma = train_cfg.effective_validation_sigma() if sigma is None else sigma

    rows = []
    for kind in ARCHITECTURE_KINDS:
        model = network.build(ModelConfig.from_dict(dict(base, kind=kind)), seed=config["reswcae"]["seed"])
        kind_cfg = train_config(config, str(out_dir / kind))
        model, _ = training.train(model, split, kind_cfg, loss_config(config))
        report = training.evaluate(
            model, split.test, [sigma], clip=config["noise"]["clip"], seed=config["noise"]["seed"]
        )
        if not rows:
            rows.append(report.row("noisy", sigma))
        rows.append(report.row(kind, sigma))

    path = out_dir / "compare.csv"
    training.write_compare_csv(rows, path)
    for row in rows:
        logging.info(f"{row.model:>12}: PSNR {row.psnr:.2f} dB, SSIM {row.ssim:.3f}, MSE {row.mse:.4f}")
    logging.info(f"Wrote {path}.")


def _named_inputs(path, height, width):
    if Path(path).is_dir():
        return data.load_named_images(path, height, width)
    return [(Path(path).name, data.read_image(path, height, width))]


def cmd_denoise(config, out_dir, checkpoint, input_path, clean_path=None, sigma=None):
    """
    Denoise one image or a directory of images.

    With `clean_path` (a file, or a directory with matching file names) a triptych
    clean | noisy | denoised is written as well. With `sigma` the reference (the clean
    image, or the input itself when no clean image is given) is degraded with AWGN first
    and the degraded image is what the model sees.
    """
    model = training.load_checkpoint(checkpoint, expected_config=requested_model_config(config))
    height, width = model.config.input_height, model.config.input_width
    inputs = _named_inputs(input_path, height, width)

    references = {}
    if clean_path:
        if Path(clean_path).is_dir():
            references = dict(data.load_named_images(clean_path, height, width))
        elif len(inputs) == 1:
            references = {inputs[0][0]: data.read_image(clean_path, height, width)}
        else:
            raise ConfigurationError("--clean must be a directory when INPUT is a directory.")

    for index, (name, image) in enumerate(inputs):
        reference = references.get(name)
        if clean_path and reference is None:
            logging.warning(f"No clean reference for {name}.")
        noisy = image
        if sigma is not None:
            if reference is None:
                reference = image
            seed = utils.derive_seed(config["noise"]["seed"], index)
            noisy = data.add_awgn(reference, NoiseSpec(sigma, seed, config["noise"]["clip"]))

        denoised = network.forward(model, noisy)
        stem = Path(name).stem
        data.write_pgm(out_dir / f"{stem}_denoised.pgm", denoised)
        if reference is not None:
            data.write_pgm(out_dir / f"{stem}_triptych.pgm", data.make_triptych(reference, noisy, denoised))
            logging.info(
                f"{name}: {psnr(noisy, reference):.2f} dB -> {psnr(denoised, reference):.2f} dB"
            )
    logging.info(f"Denoised {len(inputs)} image(s) into {out_dir}.")


def cmd_synth_data(config, out_dir, count):
    if count < 1:
        raise ConfigurationError(f"--count must be >= 1, got {count}.")
    model_cfg = model_config(config)
    target = out_dir / "synthetic"
    target.mkdir(parents=True, exist_ok=True)
    images = data.synth_dataset(
        count, seed=config["reswcae"]["seed"], height=model_cfg.input_height, width=model_cfg.input_width
    )
    for index, image in enumerate(images):
        data.write_pgm(target / f"synth_{index:05d}.pgm", image)
    logging.info(f"Wrote {count} synthetic fingerprints to {target}.")


COMMANDS = {
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "compare": cmd_compare,
    "denoise": cmd_denoise,
    "synth-data": cmd_synth_data,
}


def run(command, config_path=None, overrides=None, **options):
    """
    Run one command end to end.

    Args:
        command (str): One of `COMMANDS`.
        config_path (str): Optional path to a config.yaml file.
        overrides (dict): Config values set on the command line.
        **options: Command-specific arguments, e.g. `checkpoint` or `count`.

    Returns:
        int: 0 on success, 2 for configuration or input errors, 3 when training
        diverged, 4 for an incompatible checkpoint.
    """
    try:
        if command not in COMMANDS:
            raise ConfigurationError(f"Unknown command '{command}'.")
        config = resolve_config(config_path, overrides)
        validate_config(config)

        # Set global log level
        logging.basicConfig(level=getattr(logging, config["reswcae"]["log_level"].upper()))

        out_dir = Path(config["reswcae"]["out_dir"])
        os.makedirs(out_dir, exist_ok=True)
        with open(out_dir / RESOLVED_CONFIG_NAME, "w") as file:
            yaml.safe_dump(config, file, sort_keys=False)

        COMMANDS[command](config, out_dir, **options)
        return EXIT_OK
    except DivergenceError as e:
        logging.error(f"Training diverged: {e}")
        return EXIT_DIVERGENCE
    except IncompatibleCheckpointError as e:
        logging.error(f"Incompatible checkpoint: {e}")
        return EXIT_INCOMPATIBLE
    except (ConfigurationError, ContractViolationError, DatasetError) as e:
        logging.error(f"{type(e).__name__}: {e}")
        return EXIT_CONFIGURATION
    except Exception:
        logging.exception("An unhandled exception was raised during execution.")
        raise
