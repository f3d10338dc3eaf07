"""Model graph, deterministic forward pass with trace capture, and backprop.

A Model is an ordered list of LayerSpecs forming a DAG: every layer names
its producers, which must appear earlier in the list, so the list order is
a topological order and acyclicity comes for free. Exactly one layer may
be left unconsumed; that is the output.

The ForwardTrace stores each layer's output (for conv/dense this is the
pre-activation, nonlinearities being separate layers) plus maxpool argmax
maps. Relevance propagation and Grad-CAM run entirely from
(Model, ForwardTrace) without re-executing forward.
"""

from dataclasses import dataclass, field

import numpy as np

from . import ops
from .layers import INPUT, LayerSpec, ModelError
from .._rng import substream


@dataclass
class Model:
    layers: list
    input_shape: tuple  # reference (c, h, w) used for validation
    class_count: int
    name: str = "model"
    seed: int = 0
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        self.input_shape = tuple(int(v) for v in self.input_shape)
        if len(self.input_shape) != 3:
            raise ModelError("input_shape must be (channels, height, width)")
        self._by_name = {}
        consumed = set()
        for layer in self.layers:
            if not isinstance(layer, LayerSpec):
                raise ModelError(f"not a LayerSpec: {layer!r}")
            if layer.name in self._by_name or layer.name == INPUT:
                raise ModelError(f"duplicate layer name '{layer.name}'")
            for src in layer.inputs:
                if src != INPUT and src not in self._by_name:
                    raise ModelError(
                        f"input '{src}' is not a preceding layer", layer.name
                    )
                consumed.add(src)
            self._by_name[layer.name] = layer
        sinks = [l.name for l in self.layers if l.name not in consumed]
        if len(sinks) != 1:
            raise ModelError(
                f"model must have exactly one output layer, found {sinks}"
            )
        self.output_layer = sinks[0]
        self.shapes = self.infer_shapes(self.input_shape)
        out_c = self.shapes[self.output_layer][0]
        if out_c != self.class_count:
            raise ModelError(
                f"output layer '{self.output_layer}' emits {out_c} channels, "
                f"declared class_count is {self.class_count}"
            )

    def layer(self, name: str) -> LayerSpec:
        return self._by_name[name]

    def infer_shapes(self, input_shape) -> dict:
        """Per-layer output shapes (c, h, w) for a given input shape.

        Raises ModelError naming the first offending layer on mismatch.
        """
        shapes = {INPUT: tuple(input_shape)}
        for layer in self.layers:
            shapes[layer.name] = layer.out_shape(
                [shapes[src] for src in layer.inputs]
            )
        return shapes

    def last_conv_layer(self) -> str:
        convs = [l.name for l in self.layers if l.kind == "conv2d"]
        if not convs:
            raise ModelError("model has no convolutional layer")
        return convs[-1]

    def consumers(self) -> dict:
        """Map layer name -> names of layers that consume it."""
        out = {INPUT: []}
        for layer in self.layers:
            out[layer.name] = []
        for layer in self.layers:
            for src in layer.inputs:
                out[src].append(layer.name)
        return out


@dataclass
class ForwardTrace:
    """Cached activations of one forward pass."""

    input: np.ndarray
    outputs: dict  # layer name -> output array (pre-activation for conv/dense)
    argmax: dict   # maxpool layer name -> int32 in-window argmax map
    logits: np.ndarray

    def value(self, name: str) -> np.ndarray:
        if name == INPUT:
            return self.input
        return self.outputs[name]


def _check_finite(arr, layer_name):
    if not np.isfinite(arr).all():
        raise ModelError("non-finite values in output", layer_name)


def _layer_forward(layer, xs, capture):
    """Run one layer. xs is the list of its input arrays."""
    x = xs[0]
    if layer.kind == "conv2d":
        return ops.conv2d_forward(x, layer.weights, layer.bias,
                                  layer.stride, layer.padding), None
    if layer.kind == "dense":
        out = x[:, :, 0, 0] @ layer.weights.T
        if layer.bias is not None:
            out = out + layer.bias
        return out[:, :, None, None], None
    if layer.kind == "relu":
        return np.maximum(x, 0), None
    if layer.kind == "maxpool":
        out, arg = ops.maxpool_forward(x, layer.kernel, layer.stride)
        return out, (arg if capture else None)
    if layer.kind == "avgpool":
        return ops.avgpool_forward(x, layer.kernel, layer.stride), None
    if layer.kind == "global_avgpool":
        return x.mean(axis=(2, 3), keepdims=True), None
    if layer.kind == "concat":
        return np.concatenate(xs, axis=1), None
    if layer.kind == "flatten":
        b = x.shape[0]
        return x.reshape(b, -1, 1, 1), None
    if layer.kind == "softmax":
        return ops.softmax(x, axis=1), None
    raise ModelError(f"unsupported kind '{layer.kind}'", layer.name)


def forward(model: Model, x: np.ndarray, capture: bool = False):
    """Run the model on x. Returns (logits, trace) with trace None unless
    capture is set.

    x must be rank-4 with the model's channel count; spatial dims may
    differ from the reference shape as long as every layer still fits
    (global pooling makes the standard nets size-agnostic).
    """
    x = np.asarray(x)
    if x.ndim != 4:
        raise ModelError(f"input must be rank-4 (b,c,h,w), got shape {x.shape}")
    if x.shape[1] != model.input_shape[0]:
        raise ModelError(
            f"input has {x.shape[1]} channels, model expects "
            f"{model.input_shape[0]}"
        )
    model.infer_shapes(x.shape[1:])  # raises with the offending layer named
    values = {INPUT: x}
    argmax = {}
    for layer in model.layers:
        out, arg = _layer_forward(layer, [values[s] for s in layer.inputs], capture)
        _check_finite(out, layer.name)
        values[layer.name] = out
        if arg is not None:
            argmax[layer.name] = arg
    logits = values[model.output_layer]
    if not capture:
        return logits, None
    del values[INPUT]
    return logits, ForwardTrace(input=x, outputs=values, argmax=argmax,
                                logits=logits)


@dataclass
class Gradients:
    """Result of a backward pass."""

    input: np.ndarray
    params: dict       # layer name -> {"w": array, "b": array}
    activations: dict  # layer name -> gradient w.r.t. that layer's output


def backward(model: Model, trace: ForwardTrace, output_grad: np.ndarray) -> Gradients:
    """Backpropagate output_grad through the traced pass.

    Returns parameter gradients for conv/dense layers, the gradient w.r.t.
    the network input, and the gradient w.r.t. every layer output (the
    latter feeds Grad-CAM).
    """
    output_grad = np.asarray(output_grad)
    if output_grad.shape != trace.logits.shape:
        raise ModelError(
            f"output_grad shape {output_grad.shape} does not match logits "
            f"shape {trace.logits.shape}"
        )
    grads = {model.output_layer: output_grad}
    params = {}
    for layer in reversed(model.layers):
        g = grads.get(layer.name)
        if g is None:
            continue  # dead branch: nothing consumed this layer
        xs = [trace.value(s) for s in layer.inputs]
        if xs[0].shape[0] != g.shape[0]:
            raise ModelError("trace/model batch mismatch", layer.name)
        in_grads, pgrad = _layer_backward(layer, xs, trace, g)
        if pgrad is not None:
            params[layer.name] = pgrad
        for src, gi in zip(layer.inputs, in_grads):
            if src in grads:
                grads[src] = grads[src] + gi
            else:
                grads[src] = gi
    input_grad = grads.get(INPUT)
    if input_grad is None:
        input_grad = np.zeros_like(trace.input)
    acts = {k: v for k, v in grads.items() if k != INPUT}
    return Gradients(input=input_grad, params=params, activations=acts)


def _layer_backward(layer, xs, trace, g):
    x = xs[0]
    if layer.kind == "conv2d":
        gw, gb = ops.conv2d_param_grad(g, x, layer.weights.shape,
                                       layer.stride, layer.padding)
        gx = ops.conv2d_input_grad(g, layer.weights, x.shape,
                                   layer.stride, layer.padding)
        return [gx], {"w": gw, "b": gb}
    if layer.kind == "dense":
        g2 = g[:, :, 0, 0]
        gw = g2.T @ x[:, :, 0, 0]
        gb = g2.sum(axis=0)
        gx = (g2 @ layer.weights)[:, :, None, None]
        return [gx], {"w": gw, "b": gb}
    if layer.kind == "relu":
        return [g * (x > 0)], None
    if layer.kind == "maxpool":
        arg = trace.argmax[layer.name]
        return [ops.maxpool_scatter(g, arg, x.shape, layer.kernel,
                                    layer.stride)], None
    if layer.kind == "avgpool":
        return [ops.avgpool_input_grad(g, x.shape, layer.kernel,
                                       layer.stride)], None
    if layer.kind == "global_avgpool":
        h, w = x.shape[2:]
        return [np.broadcast_to(g / (h * w), x.shape).copy()], None
    if layer.kind == "concat":
        sizes = [a.shape[1] for a in xs]
        splits = np.cumsum(sizes)[:-1]
        return list(np.split(g, splits, axis=1)), None
    if layer.kind == "flatten":
        return [g.reshape(x.shape)], None
    if layer.kind == "softmax":
        p = ops.softmax(x, axis=1)
        dot = (g * p).sum(axis=1, keepdims=True)
        return [p * (g - dot)], None
    raise ModelError(f"unsupported kind '{layer.kind}'", layer.name)


def softmax_probs(logits: np.ndarray) -> np.ndarray:
    """Class probabilities from logits, max-shifted for stability."""
    logits = np.asarray(logits)
    if not np.isfinite(logits).all():
        raise ValueError("logits must be finite")
    return ops.softmax(logits, axis=1)


def init_weights(layers, input_shape, seed: int):
    """He-uniform init (scaled by fan-in) for all conv/dense layers.

    Returns a new layer list; biases start at zero. Each layer draws from
    its own named substream so adding layers does not reshuffle others.
    """
    shapes = {INPUT: tuple(input_shape)}
    out = []
    for layer in layers:
        in_shapes = [shapes[s] for s in layer.inputs]
        if layer.has_params and layer.weights is None:
            cin = in_shapes[0][0]
            if layer.kind == "conv2d":
                fan_in = cin * layer.kernel[0] * layer.kernel[1]
                shape = (layer.out_channels, cin) + layer.kernel
            else:
                fan_in = cin
                shape = (layer.out_channels, cin)
            limit = np.sqrt(6.0 / fan_in)
            rng = substream(seed, "init", layer.name)
            w = rng.uniform(-limit, limit, size=shape).astype(np.float32)
            layer = LayerSpec(layer.name, layer.kind, layer.inputs,
                              out_channels=layer.out_channels,
                              kernel=layer.kernel, stride=layer.stride,
                              padding=layer.padding, weights=w,
                              bias=np.zeros(layer.out_channels, np.float32))
        shapes[layer.name] = layer.out_shape(in_shapes)
        out.append(layer)
    return out


def replay_matches(model: Model, trace: ForwardTrace) -> bool:
    """Re-run every layer on its stored inputs and compare bit-exactly."""
    for layer in model.layers:
        xs = [trace.value(s) for s in layer.inputs]
        out, _ = _layer_forward(layer, xs, capture=False)
        if not np.array_equal(out, trace.outputs[layer.name]):
            return False
    return np.array_equal(trace.outputs[model.output_layer], trace.logits)
