"""
Mini-batch training with validation-based model selection, the sigma-sweep
evaluation protocol, checkpoints and CSV export.
"""

import csv
import logging
import math
import os
import struct
import tempfile

import numpy as np
import yaml

from reswcae import network, utils
from reswcae.autodiff import backward, no_grad
from reswcae.data import add_awgn
from reswcae.losses import loss as objective
from reswcae.losses import mse, psnr, ssim
from reswcae.models import (
    DatasetError,
    DivergenceError,
    EvalReport,
    EvalRow,
    IncompatibleCheckpointError,
    LossConfig,
    ModelConfig,
    NoiseSpec,
    TrainHistory,
)

CHECKPOINT_MAGIC = b"RWAE"
CHECKPOINT_VERSION = 1
CHECKPOINT_NAME = "best.rwae"

# Seed streams keep training noise, validation noise, shuffling and evaluation noise independent.
SHUFFLE_STREAM = 1
TRAIN_NOISE_STREAM = 2
VALIDATION_STREAM = 3
EVALUATION_STREAM = 4


def _sigma_key(sigma):
    return int(round(float(sigma) * 1000))


def degrade_batch(images, sigmas, seeds, clip):
    return np.stack(
        [add_awgn(image, NoiseSpec(sigma, seed, clip)) for image, sigma, seed in zip(images, sigmas, seeds)]
    )


def training_pairs(images, indices, epoch, cfg):
    """
    Noisy/clean pairs for one mini-batch; noise is resampled per (epoch, image).

    In fixed-sigma mode every pair uses `cfg.sigma`; otherwise sigma is drawn
    uniformly from [sigma_min, sigma_max] per sample.
    """
    clean = np.stack([images[i] for i in indices])
    sigmas, seeds = [], []
    for i in indices:
        seed = utils.derive_seed(cfg.seed, TRAIN_NOISE_STREAM, epoch, i)
        if cfg.sigma is None:
            sigmas.append(np.random.default_rng(seed).uniform(cfg.sigma_min, cfg.sigma_max))
        else:
            sigmas.append(cfg.sigma)
        seeds.append(seed)
    return degrade_batch(clean, sigmas, seeds, cfg.clip), clean


def _batches(count, batch_size):
    for start in range(0, count, batch_size):
        yield start, min(start + batch_size, count)


def validation_loss(model, noisy, clean, loss_cfg, batch_size, wavelet_inputs=None):
    """
    Mean per-image loss and PSNR of a fixed validation set.

    Returns:
        tuple: (loss, psnr) averaged over images.
    """
    total_loss = 0.0
    psnrs = []
    with no_grad():
        for start, stop in _batches(len(clean), batch_size):
            x = network.to_input_tensor(model, noisy[start:stop])
            features = None if wavelet_inputs is None else wavelet_inputs[start:stop]
            out = model.forward_tensor(x, wavelet_input=features)
            target = clean[start:stop][:, None]
            total_loss += objective(out, target, loss_cfg).item() * (stop - start)
            psnrs.extend(psnr(o[0], c[0]) for o, c in zip(out.data, target))
    return total_loss / len(clean), float(np.mean(psnrs))


def _snapshot(model):
    return [param.data.copy() for param in model.parameters()]


def _restore(model, snapshot):
    for param, values in zip(model.parameters(), snapshot):
        param.data[...] = values


def train(model, split, cfg, loss_cfg=None):
    """
    Optimize a model and keep the parameters with the lowest validation loss.

    Each epoch shuffles the training set with a seeded permutation, degrades every
    image with fresh noise derived from (seed, epoch, image), and takes one optimizer
    step per mini-batch. Validation pairs use fixed noise. A checkpoint is written to
    `cfg.checkpoint_dir` at every improvement.

    Args:
        model (BaseArchitecturePlugin): A built model, updated in place.
        split (DatasetSplit): Non-empty train and validation sets.
        cfg (TrainConfig): Optimization settings.
        loss_cfg (LossConfig): Objective settings, defaults when None.

    Returns:
        tuple: (model carrying the best-validation parameters, TrainHistory).

    Raises:
        DatasetError: Empty train or validation set.
        DivergenceError: Non-finite loss; the model is reset to its best parameters and
            the last good checkpoint is left in place.
    """
    loss_cfg = loss_cfg or LossConfig()
    cfg.validate()
    if not split.train or not split.validation:
        raise DatasetError("Training needs non-empty train and validation sets.")

    optimizer = utils.load_plugin("optimizers", cfg.optimizer)(model.parameters(), cfg.learning_rate)
    history = TrainHistory()

    val_clean = np.stack(split.validation)
    val_sigma = cfg.effective_validation_sigma()
    val_noisy = degrade_batch(
        val_clean,
        [val_sigma] * len(val_clean),
        [utils.derive_seed(cfg.seed, VALIDATION_STREAM, i) for i in range(len(val_clean))],
        cfg.clip,
    )
    val_features = model.wavelet_features(val_noisy) if model.uses_wavelets else None

    checkpoint_path = None
    if cfg.checkpoint_dir:
        os.makedirs(cfg.checkpoint_dir, exist_ok=True)
        checkpoint_path = os.path.join(cfg.checkpoint_dir, CHECKPOINT_NAME)

    best = _snapshot(model)
    count = len(split.train)
    logging.info(
        f"Training {model.config.kind} on {count} images, validating on {len(val_clean)} "
        f"(sigma {'%g' % cfg.sigma if cfg.sigma is not None else f'{cfg.sigma_min:g}-{cfg.sigma_max:g}'})."
    )

    for epoch in range(cfg.max_epochs):
        order = np.random.default_rng(utils.derive_seed(cfg.seed, SHUFFLE_STREAM, epoch)).permutation(count)
        epoch_loss = 0.0
        for start, stop in _batches(count, cfg.batch_size):
            noisy, clean = training_pairs(split.train, order[start:stop], epoch, cfg)
            out = model.forward_tensor(network.to_input_tensor(model, noisy))
            batch_loss = objective(out, clean[:, None], loss_cfg)
            value = batch_loss.item()
            if not math.isfinite(value):
                _restore(model, best)
                error = DivergenceError(f"Non-finite training loss at epoch {epoch + 1}.")
                error.history = history
                raise error
            optimizer.zero_grad()
            backward(batch_loss)
            optimizer.step()
            epoch_loss += value * (stop - start)
            logging.debug(f"epoch {epoch + 1} batch {start // cfg.batch_size}: loss {value:.6f}")

        val_loss, val_psnr = validation_loss(
            model, val_noisy, val_clean, loss_cfg, cfg.batch_size, val_features
        )
        if not math.isfinite(val_loss):
            _restore(model, best)
            error = DivergenceError(f"Non-finite validation loss at epoch {epoch + 1}.")
            error.history = history
            raise error

        improved = history.record(epoch_loss / count, val_loss, val_psnr)
        logging.info(
            f"Epoch {epoch + 1}/{cfg.max_epochs}: train_loss={epoch_loss / count:.6f} "
            f"val_loss={val_loss:.6f} val_psnr={val_psnr:.3f} dB{' *' if improved else ''}"
        )
        if improved:
            best = _snapshot(model)
            if checkpoint_path:
                save_checkpoint(model, history, checkpoint_path)

    _restore(model, best)
    logging.info(
        f"Best epoch {history.best_epoch + 1}: val_loss={history.val_loss[history.best_epoch]:.6f}."
    )
    return model, history


def _mean(values):
    return float(np.mean(values))


def _scores(outputs, clean):
    return (
        _mean([psnr(o, c) for o, c in zip(outputs, clean)]),
        _mean([ssim(o, c) for o, c in zip(outputs, clean)]),
        _mean([mse(o, c) for o, c in zip(outputs, clean)]),
    )


def evaluate(model, test_images, sigmas, clip=True, seed=0, label=None, batch_size=32):
    """
    Sweep noise levels over a test set.

    Every image gets a fixed noise seed derived from (seed, sigma, image index), so
    different models are scored on identical noisy inputs.

    Args:
        model (BaseArchitecturePlugin): Trained model, or None to score only the noisy inputs.
        test_images (list): Clean images.
        sigmas (list): Non-empty list of noise levels.
        clip (bool): Clip degraded images to [0, 1].
        seed (int): Evaluation noise seed.
        label (str): Row label of the model, its kind by default.
        batch_size (int): Images per forward pass.

    Returns:
        EvalReport: A `noisy` row and a model row per sigma.
    """
    if not sigmas:
        raise DatasetError("evaluate needs at least one sigma.")
    if not test_images:
        raise DatasetError("evaluate needs at least one test image.")
    clean = np.stack(test_images)
    label = label or (model.config.kind if model is not None else None)
    report = EvalReport(sigmas)

    for sigma in sigmas:
        seeds = [
            utils.derive_seed(seed, EVALUATION_STREAM, _sigma_key(sigma), i) for i in range(len(clean))
        ]
        noisy = degrade_batch(clean, [sigma] * len(clean), seeds, clip)
        noisy_psnr, noisy_ssim, noisy_mse = _scores(noisy, clean)
        report.rows.append(EvalRow("noisy", sigma, noisy_psnr, noisy_ssim, noisy_mse, 0.0))

        if model is not None:
            denoised = np.concatenate(
                [network.forward(model, noisy[start:stop]) for start, stop in _batches(len(clean), batch_size)]
            )
            model_psnr, model_ssim, model_mse = _scores(denoised, clean)
            report.rows.append(
                EvalRow(label, sigma, model_psnr, model_ssim, model_mse, model_psnr - noisy_psnr)
            )
            logging.info(
                f"sigma={sigma:g}: noisy {noisy_psnr:.2f} dB -> {label} {model_psnr:.2f} dB "
                f"(SSIM {model_ssim:.3f}, MSE {model_mse:.4f})"
            )
    return report


def save_checkpoint(model, history, path):
    """
    Write a checkpoint atomically.

    Layout: magic `RWAE`, uint32 format version, uint32 header length, a YAML header
    (architecture config, seed, parameter names and shapes, history), then every
    parameter in declaration order as uint32 ndim, uint32 dims and float32 data, all
    little-endian.

    Args:
        model (BaseArchitecturePlugin): The model to save.
        history (TrainHistory): Training record, or None.
        path (str): Destination file.
    """
    named = model.named_parameters()
    header = yaml.safe_dump(
        {
            "config": model.config.to_dict(),
            "seed": int(getattr(model, "seed", 0)),
            "parameters": [[name, list(param.shape)] for name, param in named],
            "history": history.to_dict() if history is not None else None,
        },
        sort_keys=True,
    ).encode("utf-8")

    chunks = [CHECKPOINT_MAGIC, struct.pack("<II", CHECKPOINT_VERSION, len(header)), header]
    for _, param in named:
        chunks.append(struct.pack(f"<I{param.ndim}I", param.ndim, *param.shape))
        chunks.append(param.data.astype("<f4").tobytes())

    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp_path = tempfile.mkstemp(dir=directory, prefix=".rwae-")
    try:
        with os.fdopen(fd, "wb") as file:
            for chunk in chunks:
                file.write(chunk)
        os.replace(tmp_path, path)
    except BaseException:
        if os.path.exists(tmp_path):
            os.remove(tmp_path)
        raise
    logging.debug(f"Saved checkpoint {path}.")


class _Reader:
    def __init__(self, payload, path):
        self.payload = payload
        self.offset = 0
        self.path = path

    def take(self, size):
        if self.offset + size > len(self.payload):
            raise IncompatibleCheckpointError(f"Checkpoint {self.path} is truncated.")
        chunk = self.payload[self.offset : self.offset + size]
        self.offset += size
        return chunk

    def unpack(self, fmt):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def load_checkpoint(path, expected_config=None):
    """
    Rebuild a model from a checkpoint.

    Args:
        path (str): Checkpoint file.
        expected_config (ModelConfig): When given, the stored config must equal it.

    Returns:
        BaseArchitecturePlugin: The model, with the stored TrainHistory as `model.history`.

    Raises:
        IncompatibleCheckpointError: Missing or truncated file, wrong magic or version,
            config mismatch, or parameter shapes that do not match the architecture.
    """
    try:
        with open(path, "rb") as file:
            payload = file.read()
    except OSError as e:
        raise IncompatibleCheckpointError(f"Cannot read checkpoint {path}: {e}") from e

    reader = _Reader(payload, path)
    if reader.take(len(CHECKPOINT_MAGIC)) != CHECKPOINT_MAGIC:
        raise IncompatibleCheckpointError(f"{path} is not a reswcae checkpoint.")
    version, header_length = reader.unpack("<II")
    if version != CHECKPOINT_VERSION:
        raise IncompatibleCheckpointError(
            f"Checkpoint {path} has format version {version}, expected {CHECKPOINT_VERSION}."
        )
    try:
        header = yaml.safe_load(reader.take(header_length).decode("utf-8"))
        config = ModelConfig.from_dict(header["config"])
    except IncompatibleCheckpointError:
        raise
    except Exception as e:
        raise IncompatibleCheckpointError(f"Checkpoint {path} has a malformed header: {e}") from e
    if expected_config is not None and config != expected_config:
        raise IncompatibleCheckpointError(
            f"Checkpoint {path} holds a {config.kind} model whose config differs from the requested one."
        )

    model = network.build(config, seed=header.get("seed", 0))
    named = model.named_parameters()
    stored = header.get("parameters", [])
    if [name for name, _ in stored] != [name for name, _ in named]:
        raise IncompatibleCheckpointError(f"Checkpoint {path} parameter list does not match {config.kind}.")

    values = []
    for name, param in named:
        (ndim,) = reader.unpack("<I")
        shape = reader.unpack(f"<{ndim}I")
        if tuple(shape) != param.shape:
            raise IncompatibleCheckpointError(
                f"Checkpoint {path} stores {name} as {shape}, architecture expects {param.shape}."
            )
        size = int(np.prod(shape)) * 4
        values.append(np.frombuffer(reader.take(size), dtype="<f4").reshape(shape))
    if reader.offset != len(payload):
        raise IncompatibleCheckpointError(f"Checkpoint {path} has trailing data.")

    for (_, param), value in zip(named, values):
        param.data[...] = value
    model.history = TrainHistory(**header["history"]) if header.get("history") else None
    return model


def _format(value):
    return repr(float(value)) if isinstance(value, (float, np.floating)) else value


def write_history_csv(history, path):
    """One row per epoch: epoch, train_loss, val_loss, val_psnr."""
    with open(path, "w", newline="") as file:
        writer = csv.writer(file)
        writer.writerow(["epoch", "train_loss", "val_loss", "val_psnr"])
        for row in history.rows():
            writer.writerow([_format(value) for value in row])


def write_eval_csv(report, path):
    """One row per (model, sigma): model, sigma, psnr, ssim, mse, delta_psnr."""
    with open(path, "w", newline="") as file:
        writer = csv.writer(file)
        writer.writerow(["model", "sigma", "psnr", "ssim", "mse", "delta_psnr"])
        for row in report.rows:
            writer.writerow([_format(value) for value in row.as_tuple()])


def write_compare_csv(rows, path):
    """One row per model at a single sigma: model, psnr, ssim, mse."""
    with open(path, "w", newline="") as file:
        writer = csv.writer(file)
        writer.writerow(["model", "psnr", "ssim", "mse"])
        for row in rows:
            writer.writerow([row.model, _format(row.psnr), _format(row.ssim), _format(row.mse)])
