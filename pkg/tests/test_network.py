"""Model assembly, parameter counts, the forward contract and ablations."""

import numpy as np
import pytest

from reswcae import network
from reswcae.autodiff import backward
from reswcae.losses import loss
from reswcae.models import ConfigurationError, DimensionError, LossConfig, ModelConfig


@pytest.mark.parametrize(
    "kind,count",
    [
        ("res_wcae", 966_193),
        ("wcae", 873_745),
        ("autoencoder", 775_425),
        ("dense_nn", 20_787_104),
    ],
)
def test_default_parameter_counts(kind, count):
    assert network.param_count(network.build(ModelConfig(kind=kind))) == count


def test_res_wcae_is_lightweight():
    count = network.param_count(network.build(ModelConfig()))
    assert count < 2_000_000
    assert count < 20_787_104


def test_default_shape_plan():
    plan = dict(network.build(ModelConfig()).shape_plan())
    assert plan["image_encoder.1"] == (32, 52, 48)
    assert plan["image_encoder.4"] == (256, 7, 6)
    assert plan["wavelet_encoder.3"] == (64, 13, 12)
    assert plan["decoder.3"] == (128, 13, 12)
    assert plan["decoder.2"] == (64, 26, 24)
    assert plan["decoder.1"] == (32, 52, 48)
    assert plan["decoder.output"] == (1, 103, 96)


def test_parameters_follow_declaration_order():
    model = network.build(ModelConfig())
    names = [name for name, _ in model.named_parameters()]
    assert names[:2] == ["image_encoder.1.weight", "image_encoder.1.bias"]
    assert names[-2:] == ["decoder.output.weight", "decoder.output.bias"]
    assert names.index("wavelet_encoder.1.weight") < names.index("decoder.3.weight")


@pytest.mark.parametrize("kind", ["res_wcae", "wcae", "autoencoder", "dense_nn"])
@pytest.mark.parametrize("size", [(16, 16), (35, 33)])
def test_forward_preserves_shape_and_range(tiny, rng, kind, size):
    model = network.build(tiny(kind, input_height=size[0], input_width=size[1]), seed=3)
    noisy = rng.uniform(size=(2,) + size).astype(np.float32)

    out = network.forward(model, noisy)
    assert out.shape == noisy.shape
    assert np.all((out > 0) & (out < 1))

    single = network.forward(model, noisy[0])
    assert single.shape == size
    np.testing.assert_allclose(single, out[0], rtol=1e-5, atol=1e-6)


def test_default_res_wcae_forward(rng):
    model = network.build(ModelConfig())
    out = network.forward(model, rng.uniform(size=(103, 96)).astype(np.float32))
    assert out.shape == (103, 96)
    assert out.dtype == np.float32


def test_input_size_mismatch(tiny):
    model = network.build(tiny())
    with pytest.raises(DimensionError, match="16x16"):
        network.forward(model, np.zeros((17, 16)))


def test_initialization_is_seeded(tiny):
    first = network.build(tiny(), seed=5).parameters()
    second = network.build(tiny(), seed=5).parameters()
    third = network.build(tiny(), seed=6).parameters()
    assert all(np.array_equal(a.data, b.data) for a, b in zip(first, second))
    assert not all(np.array_equal(a.data, c.data) for a, c in zip(first, third))


def _randomize_biases(model, rng):
    for name, param in model.named_parameters():
        if name.endswith(".bias"):
            param.data[...] = rng.normal(0, 0.1, size=param.shape)


def test_skip_ablation_changes_res_wcae_only(tiny, rng):
    noisy = rng.uniform(size=(2, 16, 16)).astype(np.float32)

    res = network.build(tiny("res_wcae"), seed=1)
    _randomize_biases(res, rng)
    full = network.forward(res, noisy)
    ablated = network.forward(res, noisy, ablate_skips=True)
    assert ablated.shape == full.shape
    assert not np.allclose(full, ablated)

    plain = network.build(tiny("wcae"), seed=1)
    np.testing.assert_array_equal(network.forward(plain, noisy), network.forward(plain, noisy, ablate_skips=True))


def test_wavelet_input_conditions_only_wavelet_models(tiny, rng):
    noisy = rng.uniform(size=(2, 16, 16)).astype(np.float32)
    zeros = np.zeros((2, 10, 2, 2), dtype=np.float32)

    wcae = network.build(tiny("wcae"), seed=2)
    _randomize_biases(wcae, rng)
    assert not np.allclose(network.forward(wcae, noisy), network.forward(wcae, noisy, wavelet_input=zeros))

    plain = network.build(tiny("autoencoder"), seed=2)
    np.testing.assert_array_equal(
        network.forward(plain, noisy), network.forward(plain, noisy, wavelet_input=zeros)
    )


def test_model_gradients_match_finite_differences(tiny, rng):
    model = network.build(tiny("res_wcae", input_height=19, input_width=17), seed=4, dtype=np.float64)
    _randomize_biases(model, rng)
    noisy = rng.uniform(size=(2, 19, 17))
    clean = rng.uniform(size=(2, 1, 19, 17))
    cfg = LossConfig(lam=0.1)

    def objective():
        return loss(model.forward_tensor(network.to_input_tensor(model, noisy)), clean, cfg)

    backward(objective())

    for layer_name in ("image_encoder.1", "wavelet_encoder.2", "decoder.3", "decoder.output"):
        for param in model.layers[layer_name].parameters():
            flat = param.data.reshape(-1)
            for index in rng.choice(flat.size, size=min(4, flat.size), replace=False):
                saved = flat[index]
                flat[index] = saved + 1e-6
                plus = objective().item()
                flat[index] = saved - 1e-6
                minus = objective().item()
                flat[index] = saved
                numeric = (plus - minus) / 2e-6
                assert param.grad.reshape(-1)[index] == pytest.approx(numeric, rel=1e-4, abs=1e-7)


def test_wavelet_too_long_for_input_names_layer(tiny):
    with pytest.raises(ConfigurationError, match="wavelet_encoder.1"):
        network.build(tiny(wavelet="sym4"))


def test_pyramid_depth_must_be_three(tiny):
    with pytest.raises(ConfigurationError, match="3-level"):
        network.build(tiny(wavelet_levels=2))


def test_unknown_kind():
    with pytest.raises(ConfigurationError, match="Unknown model kind"):
        ModelConfig(kind="unet")


def test_detail_bands_condition_res_wcae_only(tiny, rng):
    noisy = rng.uniform(size=(2, 16, 16)).astype(np.float32)

    res = network.build(tiny("res_wcae"), seed=7)
    _randomize_biases(res, rng)
    features = res.wavelet_features(noisy)
    approx_only = features.copy()
    approx_only[:, 1:] = 0.0
    np.testing.assert_array_equal(network.forward(res, noisy, wavelet_input=features), network.forward(res, noisy))
    assert not np.allclose(network.forward(res, noisy), network.forward(res, noisy, wavelet_input=approx_only))

    for kind in ("autoencoder", "dense_nn"):
        model = network.build(tiny(kind), seed=7)
        _randomize_biases(model, rng)
        np.testing.assert_array_equal(
            network.forward(model, noisy), network.forward(model, noisy, wavelet_input=approx_only)
        )
