"""Training loop, optimizers, evaluation protocol, checkpoints and CSV export."""

import csv
import math
import os

import numpy as np
import pytest

from reswcae import network, training
from reswcae.autodiff import Tensor
from reswcae.data import split_dataset, synth_dataset
from reswcae.models import (
    ARCHITECTURE_KINDS,
    DatasetError,
    DatasetSplit,
    DivergenceError,
    IncompatibleCheckpointError,
    LossConfig,
    ModelConfig,
    TrainConfig,
    TrainHistory,
)
from reswcae.plugins.optimizers.adam.plugin import AdamPlugin
from reswcae.plugins.optimizers.sgd.plugin import SGDPlugin


@pytest.fixture(scope="module")
def prints():
    return synth_dataset(12, seed=50, height=32, width=32)


@pytest.fixture
def split(prints):
    return split_dataset(prints, (70, 15, 15), seed=0)


@pytest.fixture
def small(tiny):
    return tiny(input_height=32, input_width=32)


def test_adam_first_step_moves_by_learning_rate():
    param = Tensor([1.0, -2.0], requires_grad=True, dtype=np.float64)
    param.grad = np.array([0.5, -3.0])
    AdamPlugin([param], 0.01).step()
    np.testing.assert_allclose(param.data, [0.99, -1.99], atol=1e-8)


@pytest.mark.parametrize("plugin", [AdamPlugin, SGDPlugin])
def test_zero_learning_rate_leaves_parameters(plugin):
    param = Tensor([1.0, -2.0], requires_grad=True)
    param.grad = np.array([0.5, -3.0], dtype=np.float32)
    plugin([param], 0.0).step()
    np.testing.assert_array_equal(param.data, [1.0, -2.0])


def test_sgd_step():
    param = Tensor([1.0, -2.0], requires_grad=True, dtype=np.float64)
    param.grad = np.array([0.5, -3.0])
    optimizer = SGDPlugin([param], 0.1)
    optimizer.step()
    np.testing.assert_allclose(param.data, [0.95, -1.7])
    optimizer.zero_grad()
    assert param.grad is None


def test_train_config_validation():
    with pytest.raises(ValueError, match="max_epochs"):
        TrainConfig(max_epochs=0)
    with pytest.raises(ValueError, match="learning_rate"):
        TrainConfig(learning_rate=0)
    with pytest.raises(ValueError, match="sigma_min"):
        TrainConfig(sigma_min=150, sigma_max=100)
    assert TrainConfig().effective_validation_sigma() == 150
    assert TrainConfig(sigma=30).effective_validation_sigma() == 30


def test_single_step_on_identical_pairs_lowers_validation_loss(small, prints):
    image = prints[0]
    pair = DatasetSplit([image], [image], [image])
    model = network.build(small, seed=0)
    cfg = TrainConfig(batch_size=1, learning_rate=1e-4, max_epochs=1, sigma=0)
    noisy = np.stack([image])
    before, _ = training.validation_loss(model, noisy, noisy, LossConfig(), 1)

    _, history = training.train(model, pair, cfg, LossConfig())
    assert history.val_loss[0] < before


def test_training_reduces_loss_and_is_reproducible(small, split):
    cfg = TrainConfig(batch_size=4, learning_rate=0.01, max_epochs=6, sigma=50, seed=3)

    _, first = training.train(network.build(small, seed=1), split, cfg)
    _, second = training.train(network.build(small, seed=1), split, cfg)

    assert len(first) == 6
    assert first.train_loss[-1] < first.train_loss[0]
    assert first.train_loss == second.train_loss
    assert first.val_loss == second.val_loss
    assert first.best_epoch == int(np.argmin(first.val_loss))


def test_sigma_range_mode_trains(small, split):
    cfg = TrainConfig(batch_size=5, learning_rate=0.005, max_epochs=2, sigma_min=20, sigma_max=60)
    _, history = training.train(network.build(small, seed=1), split, cfg)
    assert all(math.isfinite(v) for v in history.train_loss + history.val_loss + history.val_psnr)


def test_best_parameters_are_restored_and_checkpointed(small, split, tmp_path):
    cfg = TrainConfig(
        batch_size=4, learning_rate=0.02, max_epochs=5, sigma=80, checkpoint_dir=str(tmp_path)
    )
    model, history = training.train(network.build(small, seed=2), split, cfg)

    restored = training.load_checkpoint(tmp_path / training.CHECKPOINT_NAME, expected_config=small)
    for (name, param), (_, saved) in zip(model.named_parameters(), restored.named_parameters()):
        np.testing.assert_array_equal(param.data, saved.data, err_msg=name)
    assert restored.history.best_epoch == history.best_epoch
    assert restored.history.val_loss == history.val_loss[: history.best_epoch + 1]


def test_divergence_keeps_last_good_checkpoint(small, split, tmp_path, monkeypatch):
    calls = {"count": 0}
    real_objective = training.objective

    def exploding(output, clean, cfg):
        calls["count"] += 1
        value = real_objective(output, clean, cfg)
        # one training and one validation batch per epoch; epoch 2 training explodes
        return value * float("nan") if calls["count"] >= 3 else value

    monkeypatch.setattr(training, "objective", exploding)
    cfg = TrainConfig(batch_size=16, max_epochs=4, sigma=50, checkpoint_dir=str(tmp_path))
    with pytest.raises(DivergenceError) as error:
        training.train(network.build(small, seed=0), split, cfg)

    assert len(error.value.history) == 1
    assert training.load_checkpoint(tmp_path / training.CHECKPOINT_NAME).history.best_epoch == 0


def test_empty_validation_set(small, prints):
    with pytest.raises(DatasetError, match="non-empty"):
        training.train(network.build(small), DatasetSplit(prints, [], []), TrainConfig(max_epochs=1))


def test_evaluate_reports_noisy_and_model_rows(small, split):
    model = network.build(small, seed=0)
    report = training.evaluate(model, split.test, [0, 50], seed=9)

    assert report.models() == ["noisy", "res_wcae"]
    assert report.row("noisy", 0).psnr == math.inf
    assert report.row("res_wcae", 0).delta_psnr == -math.inf
    noisy, denoised = report.row("noisy", 50), report.row("res_wcae", 50)
    assert noisy.delta_psnr == 0.0
    assert denoised.delta_psnr == pytest.approx(denoised.psnr - noisy.psnr)
    assert -1 <= denoised.ssim <= 1
    assert math.isfinite(denoised.psnr)


def test_models_are_scored_on_identical_noise(small, split):
    first = training.evaluate(network.build(small, seed=0), split.test, [75], seed=4)
    autoencoder = ModelConfig(**dict(small.to_dict(), kind="autoencoder"))
    second = training.evaluate(network.build(autoencoder), split.test, [75], seed=4)
    assert first.row("noisy", 75).psnr == second.row("noisy", 75).psnr
    assert training.evaluate(None, split.test, [75], seed=4).row("noisy", 75).mse == first.row("noisy", 75).mse


def test_checkpoint_round_trip(small, tmp_path):
    model = network.build(small, seed=8)
    history = TrainHistory([1.0, 0.5], [0.9, 0.7], [10.0, 11.0], 1)
    path = tmp_path / "model.rwae"
    training.save_checkpoint(model, history, path)

    restored = training.load_checkpoint(path)
    assert restored.config == small
    assert restored.history.val_psnr == [10.0, 11.0]
    for a, b in zip(model.parameters(), restored.parameters()):
        np.testing.assert_array_equal(a.data, b.data)
    assert not [name for name in os.listdir(tmp_path) if name.startswith(".rwae-")]


def test_checkpoint_defects_are_rejected(small, tmp_path):
    path = tmp_path / "model.rwae"
    training.save_checkpoint(network.build(small), None, path)
    payload = path.read_bytes()

    cases = {
        "truncated": payload[:-10],
        "magic": b"XXXX" + payload[4:],
        "version": payload[:4] + (99).to_bytes(4, "little") + payload[8:],
        "trailing": payload + b"\x00",
    }
    for label, broken in cases.items():
        target = tmp_path / f"{label}.rwae"
        target.write_bytes(broken)
        with pytest.raises(IncompatibleCheckpointError):
            training.load_checkpoint(target)

    with pytest.raises(IncompatibleCheckpointError):
        training.load_checkpoint(tmp_path / "missing.rwae")
    with pytest.raises(IncompatibleCheckpointError, match="differs"):
        training.load_checkpoint(path, expected_config=ModelConfig(**dict(small.to_dict(), kind="wcae")))


def test_csv_exports(small, split, tmp_path):
    history = TrainHistory([1.0, 0.5], [0.9, 0.7], [10.0, 11.0], 1)
    training.write_history_csv(history, tmp_path / "history.csv")
    with open(tmp_path / "history.csv") as file:
        rows = list(csv.reader(file))
    assert rows[0] == ["epoch", "train_loss", "val_loss", "val_psnr"]
    assert rows[2] == ["1", "0.5", "0.7", "11.0"]

    report = training.evaluate(network.build(small), split.test, [0, 25])
    training.write_eval_csv(report, tmp_path / "eval.csv")
    with open(tmp_path / "eval.csv") as file:
        rows = list(csv.DictReader(file))
    assert len(rows) == 4
    assert rows[0]["model"] == "noisy" and rows[0]["psnr"] == "inf"


@pytest.mark.slow
def test_smoke_training_gains_three_db():
    """256 synthetic prints, res_wcae, sigma=100, 30 epochs, batch 32, lr 0.001."""
    split = split_dataset(synth_dataset(256, seed=0), (70, 15, 15), seed=0)
    cfg = TrainConfig(batch_size=32, learning_rate=0.001, max_epochs=30, sigma=100, seed=0)
    model, _ = training.train(network.build(ModelConfig(), seed=0), split, cfg)

    report = training.evaluate(model, split.test, [0, 100], seed=1)
    assert report.row("res_wcae", 100).delta_psnr >= 3.0
    assert report.row("res_wcae", 100).psnr > report.row("noisy", 100).psnr


@pytest.mark.slow
def test_architecture_ordering_at_smoke_scale():
    split = split_dataset(synth_dataset(256, seed=0), (70, 15, 15), seed=0)
    cfg = TrainConfig(batch_size=32, learning_rate=0.001, max_epochs=30, sigma=100, seed=0)
    scores = {}
    for kind in ARCHITECTURE_KINDS:
        model, _ = training.train(network.build(ModelConfig(kind=kind), seed=0), split, cfg)
        scores[kind] = training.evaluate(model, split.test, [100], seed=1).row(kind, 100).psnr

    assert scores["res_wcae"] >= scores["autoencoder"] - 0.5
    assert scores["autoencoder"] >= scores["dense_nn"] - 0.5


@pytest.mark.slow
@pytest.mark.skipif(not os.environ.get("RESWCAE_SOCOFING_PATH"), reason="RESWCAE_SOCOFING_PATH not set")
def test_full_protocol_on_socofing():
    from reswcae.data import load_dataset

    split = split_dataset(load_dataset(os.environ["RESWCAE_SOCOFING_PATH"]), (70, 15, 15), seed=0)
    cfg = TrainConfig(batch_size=32, learning_rate=0.001, max_epochs=200, sigma=100, seed=0)
    model, _ = training.train(network.build(ModelConfig(), seed=0), split, cfg)

    row = training.evaluate(model, split.test, [100], seed=1).row("res_wcae", 100)
    assert row.psnr >= 16.0
    assert row.ssim >= 0.72
