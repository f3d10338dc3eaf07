import numpy as np
import pytest

from relvis.nn import layers as L
from relvis.nn.model import Model, forward, replay_matches, softmax_probs
from relvis.nn.layers import ModelError

from conftest import random_chain_model


def single_layer_model(layer, input_shape, classes=None):
    return Model(layers=[layer], input_shape=input_shape,
                 class_count=classes if classes else layer.out_shape(
                     [input_shape])[0])


def test_identity_kernel_1x1():
    w = np.ones((1, 1, 1, 1), np.float32)
    m = single_layer_model(
        L.conv2d("c", L.INPUT, 1, kernel=1, weights=w,
                 bias=np.zeros(1, np.float32)),
        (1, 5, 7))
    x = np.random.default_rng(0).normal(size=(1, 1, 5, 7)).astype(np.float32)
    y, _ = forward(m, x)
    np.testing.assert_array_equal(y, x)


def test_zero_weights_constant_bias():
    w = np.zeros((2, 3, 3, 3), np.float32)
    b = np.array([0.5, -1.25], np.float32)
    m = single_layer_model(
        L.conv2d("c", L.INPUT, 2, kernel=3, padding=1, weights=w, bias=b),
        (3, 6, 6))
    x = np.random.default_rng(1).normal(size=(2, 3, 6, 6)).astype(np.float32)
    y, _ = forward(m, x)
    assert np.allclose(y[:, 0], 0.5) and np.allclose(y[:, 1], -1.25)


def test_averaging_kernel_on_constant_input():
    w = np.full((1, 1, 3, 3), 1.0 / 9.0, np.float32)
    m = single_layer_model(
        L.conv2d("c", L.INPUT, 1, kernel=3, weights=w,
                 bias=np.zeros(1, np.float32)),
        (1, 8, 8))
    x = np.full((1, 1, 8, 8), 3.75, np.float32)
    y, _ = forward(m, x)
    assert y.shape == (1, 1, 6, 6)
    np.testing.assert_allclose(y, 3.75, rtol=1e-6)


def test_conv_output_size_formula():
    # floor((H + 2p - k)/s) + 1
    w = np.zeros((1, 1, 5, 5), np.float32)
    m = single_layer_model(
        L.conv2d("c", L.INPUT, 1, kernel=5, stride=2, padding=2, weights=w,
                 bias=np.zeros(1, np.float32)),
        (1, 11, 11))
    y, _ = forward(m, np.zeros((1, 1, 11, 11), np.float32))
    assert y.shape[2:] == ((11 + 4 - 5) // 2 + 1,) * 2


def test_maxpool_first_index_wins_on_ties():
    m = single_layer_model(L.maxpool("p", L.INPUT, kernel=2), (1, 2, 2))
    x = np.full((1, 1, 2, 2), 7.0, np.float32)
    _, trace = forward(m, x, capture=True)
    assert trace.argmax["p"][0, 0, 0, 0] == 0


def test_logits_shape_and_trace_replay(rng):
    for _ in range(5):
        m = random_chain_model(rng, bias_free=False)
        x = rng.normal(size=(2,) + m.input_shape).astype(np.float32)
        logits, trace = forward(m, x, capture=True)
        assert logits.shape == (2, m.class_count, 1, 1)
        assert replay_matches(m, trace)


def test_forward_deterministic(rng):
    m = random_chain_model(rng)
    x = rng.normal(size=(1,) + m.input_shape).astype(np.float32)
    y1, _ = forward(m, x)
    y2, _ = forward(m, x)
    np.testing.assert_array_equal(y1, y2)


def test_shape_mismatch_names_layer():
    m = single_layer_model(
        L.dense("logits", L.INPUT, 2,
                weights=np.zeros((2, 4), np.float32),
                bias=np.zeros(2, np.float32)),
        (4, 1, 1))
    with pytest.raises(ModelError, match="logits"):
        forward(m, np.zeros((1, 4, 3, 3), np.float32))


def test_channel_mismatch_rejected():
    m = single_layer_model(
        L.dense("d", L.INPUT, 2, weights=np.zeros((2, 4), np.float32)),
        (4, 1, 1))
    with pytest.raises(ModelError, match="channels"):
        forward(m, np.zeros((1, 3, 1, 1), np.float32))


def test_spatially_flexible_with_global_pool(rng):
    m = random_chain_model(rng, input_size=12)
    big = rng.normal(size=(1, m.input_shape[0], 20, 20)).astype(np.float32)
    logits, _ = forward(m, big)
    assert logits.shape == (1, m.class_count, 1, 1)


def test_model_requires_single_output():
    layers = [
        L.conv2d("a", L.INPUT, 1, kernel=1,
                 weights=np.ones((1, 1, 1, 1), np.float32)),
        L.conv2d("b", L.INPUT, 1, kernel=1,
                 weights=np.ones((1, 1, 1, 1), np.float32)),
    ]
    with pytest.raises(ModelError, match="exactly one output"):
        Model(layers=layers, input_shape=(1, 4, 4), class_count=1)


def test_concat_spatial_mismatch_rejected():
    layers = [
        L.conv2d("a", L.INPUT, 1, kernel=1,
                 weights=np.ones((1, 1, 1, 1), np.float32)),
        L.conv2d("b", L.INPUT, 1, kernel=3,
                 weights=np.ones((1, 1, 3, 3), np.float32)),
        L.concat("cat", ("a", "b")),
    ]
    with pytest.raises(ModelError, match="spatial"):
        Model(layers=layers, input_shape=(1, 8, 8), class_count=2)


def test_softmax_probs_symmetry():
    probs = softmax_probs(np.zeros((1, 2, 1, 1), np.float32))
    np.testing.assert_allclose(probs[0, :, 0, 0], [0.5, 0.5])


def test_softmax_probs_stable_under_large_shift():
    logits = np.array([[[[0.0]], [[900.0]]]], np.float32)
    probs = softmax_probs(logits)
    assert np.isfinite(probs).all()
    assert probs[0, 1, 0, 0] > 0.999999


def test_softmax_probs_closed_form():
    logits = np.log(np.array([[[[1.0]], [[3.0]]]], np.float32))
    probs = softmax_probs(logits)
    np.testing.assert_allclose(probs[0, :, 0, 0], [0.25, 0.75], atol=1e-6)
    assert abs(probs[0, :, 0, 0].sum() - 1.0) < 1e-6
