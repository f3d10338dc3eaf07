"""Layer definitions and their shape rules.

A LayerSpec is a plain record: kind, the names of its input layers
("input" refers to the network input), kind-specific geometry and the
weight arrays where applicable. Forward/backward kernels live in ops.py;
the dispatch over kinds lives in model.py.
"""

from dataclasses import dataclass, field

import numpy as np

from .ops import conv_out_size

KINDS = (
    "conv2d",
    "dense",
    "relu",
    "maxpool",
    "avgpool",
    "global_avgpool",
    "concat",
    "flatten",
    "softmax",
)

INPUT = "input"  # sentinel name for the network input


class ModelError(ValueError):
    """Structural problem in a model or a shape mismatch at a layer."""

    def __init__(self, message, layer=None):
        super().__init__(f"layer '{layer}': {message}" if layer else message)
        self.layer = layer


def _pair(v):
    if isinstance(v, (tuple, list)):
        a, b = v
        return int(a), int(b)
    return int(v), int(v)


@dataclass
class LayerSpec:
    name: str
    kind: str
    inputs: tuple
    out_channels: int = 0
    kernel: tuple = (1, 1)
    stride: tuple = (1, 1)
    padding: tuple = (0, 0)
    weights: np.ndarray | None = None
    bias: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ModelError(f"unsupported layer kind '{self.kind}'", self.name)
        self.inputs = tuple(self.inputs)
        self.kernel = _pair(self.kernel)
        self.stride = _pair(self.stride)
        self.padding = _pair(self.padding)
        if min(self.stride) < 1:
            raise ModelError("stride must be >= 1", self.name)
        if min(self.padding) < 0:
            raise ModelError("padding must be >= 0", self.name)
        if self.kind == "concat":
            if len(self.inputs) < 2:
                raise ModelError("concat needs >= 2 inputs", self.name)
        elif len(self.inputs) != 1:
            raise ModelError(f"{self.kind} takes exactly one input", self.name)
        for attr in ("weights", "bias"):
            arr = getattr(self, attr)
            if arr is not None:
                # private copy, locked: layers are immutable once built
                arr = np.array(arr, dtype=np.float32, order="C")
                arr.setflags(write=False)
                setattr(self, attr, arr)

    @property
    def has_params(self) -> bool:
        return self.kind in ("conv2d", "dense")

    def check_weights(self, in_channels: int):
        """Validate weight/bias shapes against the incoming channel count."""
        if self.kind == "conv2d":
            want = (self.out_channels, in_channels) + self.kernel
            if self.weights is None or self.weights.shape != want:
                raise ModelError(
                    f"conv2d weights must have shape {want}, got "
                    f"{None if self.weights is None else self.weights.shape}",
                    self.name,
                )
        elif self.kind == "dense":
            want = (self.out_channels, in_channels)
            if self.weights is None or self.weights.shape != want:
                raise ModelError(
                    f"dense weights must have shape {want}, got "
                    f"{None if self.weights is None else self.weights.shape}",
                    self.name,
                )
        if self.has_params and self.bias is not None:
            if self.bias.shape != (self.out_channels,):
                raise ModelError(
                    f"bias must have shape ({self.out_channels},)", self.name
                )

    def out_shape(self, in_shapes):
        """(c, h, w) of the output given input shapes, validating on the way."""
        if self.kind == "concat":
            c0, h0, w0 = in_shapes[0]
            for c, h, w in in_shapes[1:]:
                if (h, w) != (h0, w0):
                    raise ModelError(
                        f"concat inputs disagree on spatial dims: "
                        f"{(h, w)} vs {(h0, w0)}",
                        self.name,
                    )
            return (sum(s[0] for s in in_shapes), h0, w0)
        c, h, w = in_shapes[0]
        if self.kind == "conv2d":
            self.check_weights(c)
            oh = conv_out_size(h, self.kernel[0], self.stride[0], self.padding[0])
            ow = conv_out_size(w, self.kernel[1], self.stride[1], self.padding[1])
            return (self.out_channels, oh, ow)
        if self.kind == "dense":
            if (h, w) != (1, 1):
                raise ModelError(
                    f"dense expects 1x1 spatial input (got {h}x{w}); "
                    "add flatten or global_avgpool first",
                    self.name,
                )
            self.check_weights(c)
            return (self.out_channels, 1, 1)
        if self.kind in ("maxpool", "avgpool"):
            oh = conv_out_size(h, self.kernel[0], self.stride[0], 0)
            ow = conv_out_size(w, self.kernel[1], self.stride[1], 0)
            return (c, oh, ow)
        if self.kind == "global_avgpool":
            return (c, 1, 1)
        if self.kind == "flatten":
            return (c * h * w, 1, 1)
        return (c, h, w)  # relu, softmax


def conv2d(name, inp, out_channels, kernel, stride=1, padding=0, weights=None, bias=None):
    return LayerSpec(name, "conv2d", (inp,), out_channels=out_channels,
                     kernel=kernel, stride=stride, padding=padding,
                     weights=weights, bias=bias)


def dense(name, inp, out_features, weights=None, bias=None):
    return LayerSpec(name, "dense", (inp,), out_channels=out_features,
                     weights=weights, bias=bias)


def relu(name, inp):
    return LayerSpec(name, "relu", (inp,))


def maxpool(name, inp, kernel, stride=None):
    return LayerSpec(name, "maxpool", (inp,), kernel=kernel,
                     stride=kernel if stride is None else stride)


def avgpool(name, inp, kernel, stride=None):
    return LayerSpec(name, "avgpool", (inp,), kernel=kernel,
                     stride=kernel if stride is None else stride)


def global_avgpool(name, inp):
    return LayerSpec(name, "global_avgpool", (inp,))


def concat(name, inputs):
    return LayerSpec(name, "concat", tuple(inputs))


def flatten(name, inp):
    return LayerSpec(name, "flatten", (inp,))


def softmax_layer(name, inp):
    return LayerSpec(name, "softmax", (inp,))
