import numpy as np
import pytest

from relvis.nn import layers as L
from relvis.nn.model import Model, init_weights


def random_chain_model(rng, bias_free=True, input_size=None):
    """Random small net: conv/relu stacks with optional pooling, a
    two-branch concat block, global pooling and a dense head. Covers every
    layer kind the relevance pass has to handle."""
    size = int(input_size if input_size else rng.integers(10, 17))
    channels = int(rng.integers(1, 4))
    classes = int(rng.integers(2, 5))
    specs = [
        L.conv2d("conv1", L.INPUT, int(rng.integers(3, 7)),
                 kernel=int(rng.choice([1, 3, 5])),
                 padding=int(rng.integers(0, 2))),
        L.relu("relu1", "conv1"),
    ]
    prev = "relu1"
    if rng.random() < 0.5:
        specs.append(L.maxpool("pool1", prev, kernel=2))
        prev = "pool1"
    elif rng.random() < 0.5:
        specs.append(L.avgpool("pool1", prev, kernel=2))
        prev = "pool1"
    # two-branch block with concat
    specs += [
        L.conv2d("ba", prev, int(rng.integers(2, 5)), kernel=1),
        L.relu("ba_relu", "ba"),
        L.conv2d("bb", prev, int(rng.integers(2, 5)), kernel=3, padding=1),
        L.relu("bb_relu", "bb"),
        L.concat("cat", ("ba_relu", "bb_relu")),
        L.conv2d("conv2", "cat", int(rng.integers(3, 8)), kernel=3, padding=1),
        L.relu("relu2", "conv2"),
        L.global_avgpool("gap", "relu2"),
        L.flatten("flat", "gap"),
        L.dense("logits", "flat", classes),
    ]
    shape = (channels, size, size)
    seed = int(rng.integers(0, 2**31))
    specs = init_weights(specs, shape, seed)
    if not bias_free:
        out = []
        init_rng = np.random.default_rng(seed)
        for layer in specs:
            if layer.has_params:
                b = init_rng.normal(0, 0.1, layer.out_channels).astype(np.float32)
                layer = L.LayerSpec(layer.name, layer.kind, layer.inputs,
                                    out_channels=layer.out_channels,
                                    kernel=layer.kernel, stride=layer.stride,
                                    padding=layer.padding,
                                    weights=layer.weights, bias=b)
            out.append(layer)
        specs = out
    return Model(layers=specs, input_shape=shape, class_count=classes,
                 name="random-net", seed=seed)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
