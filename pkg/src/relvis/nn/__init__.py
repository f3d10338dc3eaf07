from .layers import (
    INPUT,
    LayerSpec,
    ModelError,
    avgpool,
    concat,
    conv2d,
    dense,
    flatten,
    global_avgpool,
    maxpool,
    relu,
    softmax_layer,
)
from .model import (
    ForwardTrace,
    Gradients,
    Model,
    backward,
    forward,
    init_weights,
    replay_matches,
    softmax_probs,
)
from .io import FormatError, load_model, read_tensor, save_model, write_tensor

__all__ = [
    "INPUT", "LayerSpec", "ModelError", "avgpool", "concat", "conv2d",
    "dense", "flatten", "global_avgpool", "maxpool", "relu", "softmax_layer",
    "ForwardTrace", "Gradients", "Model", "backward", "forward",
    "init_weights", "replay_matches", "softmax_probs",
    "FormatError", "load_model", "read_tensor", "save_model", "write_tensor",
]
