"""Gradient checks against central finite differences.

The oracle perturbs one scalar at a time in float64 and compares
(f(x+h) - f(x-h)) / 2h against the analytic backward pass, using a scalar
loss sum(logits * probe) with a fixed random probe.
"""

import numpy as np
import pytest
from dataclasses import replace

from relvis.nn import layers as L
from relvis.nn.layers import ModelError
from relvis.nn.model import Model, backward, forward

from conftest import random_chain_model

STEP = 1e-3
MAX_REL_ERR = 1e-3


def _loss_and_grads(model, x, probe):
    logits, trace = forward(model, x, capture=True)
    loss = float((logits * probe).sum())
    grads = backward(model, trace, probe)
    return loss, grads


def _fd_param(model, x, probe, layer_name, key, idx):
    layer = model.layer(layer_name)

    def rebuilt(delta):
        arr = np.array(layer.weights if key == "w" else layer.bias,
                       dtype=np.float64)
        arr[idx] += delta
        kwargs = {"weights": arr} if key == "w" else {"bias": arr}
        specs = [replace(l, **kwargs) if l.name == layer_name else l
                 for l in model.layers]
        return Model(layers=specs, input_shape=model.input_shape,
                     class_count=model.class_count)

    # float32 weight storage: evaluate fd at float64 input to keep noise low
    x64 = x.astype(np.float64)
    lo, _ = forward(rebuilt(-STEP), x64)
    hi, _ = forward(rebuilt(+STEP), x64)
    return float(((hi - lo) * probe).sum()) / (2 * STEP)


def _fd_input(model, x, probe, idx):
    x64 = x.astype(np.float64)
    lo = x64.copy()
    hi = x64.copy()
    lo[idx] -= STEP
    hi[idx] += STEP
    out_lo, _ = forward(model, lo)
    out_hi, _ = forward(model, hi)
    return float(((out_hi - out_lo) * probe).sum()) / (2 * STEP)


def _check_param_grads(model, x, rng, n_samples=40):
    probe = rng.normal(size=(x.shape[0], model.class_count, 1, 1))
    _, grads = _loss_and_grads(model, x.astype(np.float64), probe)
    checked = 0
    for name, g in grads.params.items():
        for key in ("w", "b"):
            arr = g[key]
            flat = arr.reshape(-1)
            take = min(n_samples, flat.size)
            for k in rng.choice(flat.size, size=take, replace=False):
                idx = np.unravel_index(k, arr.shape)
                fd = _fd_param(model, x, probe, name, key, idx)
                analytic = float(flat[k])
                err = abs(analytic - fd) / max(abs(fd), abs(analytic), 1e-4)
                assert err < MAX_REL_ERR, (
                    f"{name}.{key}{idx}: analytic {analytic}, fd {fd}"
                )
                checked += 1
    return checked


def _check_input_grads(model, x, rng, n_samples=40):
    probe = rng.normal(size=(x.shape[0], model.class_count, 1, 1))
    _, grads = _loss_and_grads(model, x.astype(np.float64), probe)
    flat = grads.input.reshape(-1)
    for k in rng.choice(x.size, size=min(n_samples, x.size), replace=False):
        idx = np.unravel_index(k, x.shape)
        fd = _fd_input(model, x, probe, idx)
        analytic = float(flat[k])
        err = abs(analytic - fd) / max(abs(fd), abs(analytic), 1e-4)
        assert err < MAX_REL_ERR, f"input{idx}: analytic {analytic}, fd {fd}"


def test_dense_linear_layer_exact():
    w = np.array([[2.0, -3.0, 0.5]], np.float32)
    m = Model(layers=[L.dense("d", L.INPUT, 1, weights=w,
                              bias=np.zeros(1, np.float32))],
              input_shape=(3, 1, 1), class_count=1)
    x = np.array([[[[1.0]], [[2.0]], [[3.0]]]], np.float64)
    _, trace = forward(m, x, capture=True)
    grads = backward(m, trace, np.ones((1, 1, 1, 1)))
    np.testing.assert_allclose(grads.params["d"]["w"], x[0, :, 0, 0][None, :])
    np.testing.assert_allclose(grads.input[0, :, 0, 0], w[0])


def test_relu_gates_negative_preactivation():
    m = Model(layers=[L.relu("r", L.INPUT)], input_shape=(1, 2, 2),
              class_count=1)
    x = np.array([[[[1.0, -1.0], [-2.0, 3.0]]]])
    _, trace = forward(m, x, capture=True)
    grads = backward(m, trace, np.ones_like(x))
    np.testing.assert_array_equal(grads.input,
                                  [[[[1.0, 0.0], [0.0, 1.0]]]])


def test_random_net_gradients_vs_fd(rng):
    m = random_chain_model(rng, bias_free=False, input_size=8)
    x = rng.normal(size=(2,) + m.input_shape)
    checked = _check_param_grads(m, x, rng, n_samples=25)
    assert checked >= 100


@pytest.mark.parametrize("kind", ["conv2d", "dense", "relu", "maxpool",
                                  "avgpool", "global_avgpool", "concat",
                                  "flatten", "softmax"])
def test_every_layer_kind_against_fd(kind, rng):
    """Parameter gradients for parametric kinds, input gradients through a
    net containing the kind otherwise."""
    if kind == "conv2d":
        specs = [L.conv2d("c", L.INPUT, 4, kernel=3, padding=1),
                 L.global_avgpool("g", "c"),
                 L.dense("d", "g", 2)]
    elif kind == "dense":
        specs = [L.flatten("f", L.INPUT), L.dense("d", "f", 3)]
    elif kind == "relu":
        specs = [L.conv2d("c", L.INPUT, 3, kernel=3), L.relu("r", "c"),
                 L.global_avgpool("g", "r"), L.dense("d", "g", 2)]
    elif kind == "maxpool":
        specs = [L.conv2d("c", L.INPUT, 3, kernel=3),
                 L.maxpool("p", "c", kernel=2),
                 L.global_avgpool("g", "p"), L.dense("d", "g", 2)]
    elif kind == "avgpool":
        specs = [L.conv2d("c", L.INPUT, 3, kernel=3),
                 L.avgpool("p", "c", kernel=2),
                 L.global_avgpool("g", "p"), L.dense("d", "g", 2)]
    elif kind == "global_avgpool":
        specs = [L.conv2d("c", L.INPUT, 3, kernel=1),
                 L.global_avgpool("g", "c"), L.dense("d", "g", 2)]
    elif kind == "concat":
        specs = [L.conv2d("a", L.INPUT, 2, kernel=1),
                 L.conv2d("b", L.INPUT, 3, kernel=1),
                 L.concat("cat", ("a", "b")),
                 L.global_avgpool("g", "cat"), L.dense("d", "g", 2)]
    elif kind == "flatten":
        specs = [L.avgpool("p", L.INPUT, kernel=4),
                 L.flatten("f", "p"), L.dense("d", "f", 2)]
    else:  # softmax
        specs = [L.flatten("f", L.INPUT), L.dense("d", "f", 3),
                 L.softmax_layer("s", "d")]
    shape = (2, 8, 8)
    from relvis.nn.model import init_weights
    m = Model(layers=init_weights(specs, shape, seed=7), input_shape=shape,
              class_count=_classes(specs))
    x = rng.normal(size=(2,) + shape)
    _check_param_grads(m, x, rng, n_samples=30)
    _check_input_grads(m, x, rng, n_samples=40)


def _classes(specs):
    for s in reversed(specs):
        if s.kind == "dense":
            return s.out_channels
    raise AssertionError("test net needs a dense layer")


def test_trace_model_mismatch_rejected(rng):
    m = random_chain_model(rng)
    x = rng.normal(size=(1,) + m.input_shape).astype(np.float32)
    _, trace = forward(m, x, capture=True)
    bad = np.zeros((1, m.class_count + 1, 1, 1), np.float32)
    with pytest.raises(ModelError, match="output_grad"):
        backward(m, trace, bad)
