import logging

import numpy as np
import pytest

from reswcae.models import ModelConfig


def pytest_addoption(parser):
    parser.addoption(
        "--run-slow",
        action="store_true",
        default=False,
        help="Run long training experiments.",
    )


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: long-running training experiment")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--run-slow"):
        return
    skip_slow = pytest.mark.skip(reason="needs --run-slow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def tiny_config(kind="res_wcae", **overrides):
    """A 16x16 configuration small enough for gradient checks; haar fits 3 levels of 16."""
    values = dict(
        kind=kind,
        image_encoder_filters=(2, 3, 4, 5),
        wavelet_encoder_filters=(2, 2, 3),
        decoder_filters=(4, 3, 2, 1),
        wavelet="haar",
        input_height=16,
        input_width=16,
        dense_hidden=(8, 4, 8),
    )
    values.update(overrides)
    return ModelConfig(**values)


@pytest.fixture
def tiny():
    return tiny_config


@pytest.fixture(autouse=True)
def quiet_logging(caplog):
    caplog.set_level(logging.WARNING)
