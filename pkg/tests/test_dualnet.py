import numpy as np
import pytest

from dualdepth import autodiff as ad
from dualdepth.autodiff import ShapeError, Tensor
from dualdepth.dualnet import DualModel, NetworkConfig, forward, init_params, layer_table, parameter_count

# frozen from the layer table of the default configuration
DEFAULT_PARAMETER_COUNT = 143052


def image(seed=0, shape=(1, 3, 64, 128)):
    return np.random.default_rng(seed).uniform(size=shape)


def test_parameter_count_regression():
    cfg = NetworkConfig()
    assert parameter_count(cfg) == DEFAULT_PARAMETER_COUNT
    assert init_params(cfg).count == DEFAULT_PARAMETER_COUNT
    by_table = sum(o * i * k * k + o for _, i, o, k, _, _ in layer_table(cfg))
    assert by_table == DEFAULT_PARAMETER_COUNT
    assert 50_000 <= DEFAULT_PARAMETER_COUNT <= 200_000


def test_init_is_seeded_and_glorot_bounded():
    cfg = NetworkConfig(seed=4)
    a, b = init_params(cfg), init_params(cfg)
    assert all(np.array_equal(a.arrays[k], b.arrays[k]) for k in a.names)
    c = init_params(NetworkConfig(seed=5))
    assert any(not np.array_equal(a.arrays[k], c.arrays[k]) for k in a.names)
    for name, arr in a.arrays.items():
        if name.endswith(".bias"):
            assert np.all(arr == 0)
        else:
            o, i, kh, kw = arr.shape
            assert np.abs(arr).max() <= np.sqrt(6.0 / (i * kh * kw + o * kh * kw))


def test_pyramid_shapes_and_range():
    cfg = NetworkConfig()
    pyr = forward(init_params(cfg), Tensor(image()), cfg)
    assert [p.shape for p in pyr] == [(1, 1, 64, 128), (1, 1, 32, 64), (1, 1, 16, 32), (1, 1, 8, 16)]
    for p in pyr:
        assert p.values.min() > 0.0 and p.values.max() < 0.3


def test_range_holds_for_extreme_inputs():
    cfg = NetworkConfig(out_channels=2)
    x = np.random.default_rng(1).normal(scale=1e3, size=(1, 3, 32, 32))
    for p in forward(init_params(cfg), Tensor(x), cfg):
        assert p.shape[1] == 2
        assert np.all(np.isfinite(p.values)) and p.values.min() >= 0.0 and p.values.max() <= 0.3


def test_divisibility_error():
    cfg = NetworkConfig()
    with pytest.raises(ShapeError):
        forward(init_params(cfg), Tensor(np.zeros((1, 3, 40, 64))), cfg)


def test_config_validation():
    with pytest.raises(ValueError):
        NetworkConfig(encoder_depth=3)
    with pytest.raises(ValueError):
        DualModel.create(6, NetworkConfig(out_channels=2))


def test_networks_start_different_and_are_isolated():
    model = DualModel.create(6)
    assert not np.array_equal(model.params_l.arrays["disp1.weight"], model.params_r.arrays["disp1.weight"])
    x = image(2)
    before = model.predict_disparity(x, "left")
    for arr in model.params_r.arrays.values():
        arr += 1.0
    np.testing.assert_array_equal(model.predict_disparity(x, "left"), before)


def test_inference_selects_scale_one_and_channel():
    model = DualModel.create(12)
    x = image(3)
    pyr = forward(model.params_l, Tensor(x))
    np.testing.assert_array_equal(model.predict_disparity(x, "left", 0), pyr[0].values[:, :1])
    np.testing.assert_array_equal(model.predict_disparity(x, "left", 1), pyr[0].values[:, 1:])
    pyr_r = forward(model.params_r, Tensor(x))
    np.testing.assert_array_equal(model.predict_disparity(x, "right"), pyr_r[0].values[:, :1])
    np.testing.assert_array_equal(model.predict_disparity(x), model.predict_disparity(x))
    with pytest.raises(ValueError):
        model.predict_disparity(x, "left", 2)
    with pytest.raises(ValueError):
        model.predict_disparity(x, "centre")


def test_gradients_reach_every_parameter():
    cfg = NetworkConfig()
    params = init_params(cfg)
    tensors = params.as_tensors(requires_grad=True)
    with ad.Tape() as tape:
        pyr = forward(tensors, Tensor(image(4, (1, 3, 32, 64))), cfg)
        total = ad.mean_all(pyr[0])
        for p in pyr[1:]:
            total = total + ad.mean_all(p)
        tape.backward(total)
    for name, t in tensors.items():
        assert t.grad is not None and t.grad.shape == params.arrays[name].shape, name
