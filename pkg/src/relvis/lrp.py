"""Layer-wise relevance propagation.

The target-class logit is redistributed backward through the traced
network: dense layers by the epsilon rule

    R_i = sum_j z_ij / (sum_i' z_i'j + eps * sign(sum_i' z_i'j)) * R_j

and convolution / average-pooling layers by the alpha-beta rule

    R_i = sum_j (alpha * z_ij+ / sum_i' z_i'j+
                 + beta * z_ij- / sum_i' z_i'j-) * R_j

with z_ij the pre-activation contribution of input i to output j. ReLU
passes relevance through unchanged, maxpool routes winner-take-all to the
recorded argmax, concat splits by channel position, flatten reshapes.
Softmax never takes part; relevance starts at the logit itself.

Internals run in float64; heatmaps are emitted as float32.
"""

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .nn import ops
from .nn.layers import INPUT, ModelError
from .nn.model import ForwardTrace, Model

_TINY = 1e-12  # stabilizer for zero denominators: such units redistribute ~nothing

HEATMAP_MAGIC = b"RHMP"


@dataclass(frozen=True)
class RuleConfig:
    """Rule parameters and the per-layer-kind rule assignment."""

    epsilon: float = 1.0
    alpha: float = 1.0
    beta: float = 0.0
    rule_map: dict = field(default_factory=lambda: dict(DEFAULT_RULE_MAP))
    bias_mode: str = "include_in_denominator"  # or "exclude"

    def __post_init__(self):
        if self.epsilon < 0:
            raise ValueError("epsilon must be >= 0")
        if self.bias_mode not in ("include_in_denominator", "exclude"):
            raise ValueError(f"unknown bias_mode '{self.bias_mode}'")
        for kind, rule in self.rule_map.items():
            if rule not in ("epsilon", "alphabeta"):
                raise ValueError(f"unknown rule '{rule}' for kind '{kind}'")

    def rule_for(self, kind: str) -> str:
        return self.rule_map.get(kind, DEFAULT_RULE_MAP[kind])

    @classmethod
    def conserving(cls, alpha: float = 1.0, beta: float = 0.0):
        """Configuration under which redistribution sums are preserved:
        eps = 0 and alpha - beta = 1, biases kept out of denominators."""
        if abs(alpha - beta - 1.0) > 1e-12:
            raise ValueError("conservation requires alpha - beta = 1")
        return cls(epsilon=0.0, alpha=alpha, beta=beta, bias_mode="exclude")


DEFAULT_RULE_MAP = {
    "dense": "epsilon",
    "conv2d": "alphabeta",
    "avgpool": "alphabeta",
    "global_avgpool": "alphabeta",
}


@dataclass
class RelevanceState:
    """Per-layer relevance tensors of one completed propagation."""

    relevances: dict          # layer name (and INPUT) -> float64 array
    target_class: int
    output_relevance: float   # target logit injected at the output
    input_relevance: np.ndarray = None

    def __post_init__(self):
        if self.input_relevance is None:
            self.input_relevance = self.relevances[INPUT]


@dataclass
class Heatmap:
    """Single-channel signed relevance raster."""

    values: np.ndarray       # (h, w) float32
    normalization: str = "raw"   # raw | local | global
    divisor: float = 1.0
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float32)
        if self.values.ndim != 2:
            raise ValueError(f"heatmap must be 2-D, got shape {self.values.shape}")

    @property
    def shape(self):
        return self.values.shape


def _stabilized(z, epsilon):
    """Denominator z + eps*sign(z) with sign(0) := +1 and a floor that
    keeps eps=0 free of divisions by exactly zero."""
    eps = max(epsilon, _TINY)
    return np.where(z >= 0, z + eps, z - eps)


def _split(arr):
    return np.maximum(arr, 0), np.minimum(arr, 0)


def _linear_relevance(layer, x, rel_out, rules):
    """Redistribute rel_out through one linear layer (conv/dense/pools)."""
    kind = layer.kind
    x = x.astype(np.float64, copy=False)

    if kind == "conv2d":
        w = layer.weights.astype(np.float64)
        apply_w = lambda xx, ww: ops.conv2d_forward(xx, ww, None, layer.stride,
                                                    layer.padding)
        adjoint = lambda ss, ww: ops.conv2d_input_grad(ss, ww, x.shape,
                                                       layer.stride, layer.padding)
    elif kind == "dense":
        w = layer.weights.astype(np.float64)
        apply_w = lambda xx, ww: (xx[:, :, 0, 0] @ ww.T)[:, :, None, None]
        adjoint = lambda ss, ww: (ss[:, :, 0, 0] @ ww)[:, :, None, None]
    elif kind == "avgpool":
        w = None
        apply_w = lambda xx: ops.avgpool_forward(xx, layer.kernel, layer.stride)
        adjoint = lambda ss: ops.avgpool_input_grad(ss, x.shape, layer.kernel,
                                                    layer.stride)
    elif kind == "global_avgpool":
        w = None
        apply_w = lambda xx: xx.mean(axis=(2, 3), keepdims=True)
        adjoint = lambda ss: np.broadcast_to(
            ss / (x.shape[2] * x.shape[3]), x.shape).copy()
    else:  # pragma: no cover - guarded by caller
        raise ModelError(f"no linear relevance rule for kind '{kind}'", layer.name)

    bias = None
    if layer.bias is not None and rules.bias_mode == "include_in_denominator":
        bias = layer.bias.astype(np.float64)[None, :, None, None]

    if rules.rule_for(kind) == "epsilon":
        if w is None:
            z = apply_w(x)
        else:
            z = apply_w(x, w)
        if bias is not None:
            z = z + bias
        s = rel_out / _stabilized(z, rules.epsilon)
        if w is None:
            return x * adjoint(s)
        return x * adjoint(s, w)

    # alpha-beta: split contributions by sign via w+x+ + w-x- / w+x- + w-x+
    xp, xm = _split(x)
    if w is None:
        z_pp, z_mm = apply_w(xp), apply_w(xm)  # positive weights only
        z_plus, z_minus = z_pp, z_mm
    else:
        wp, wm = _split(w)
        z_plus = apply_w(xp, wp) + apply_w(xm, wm)
        z_minus = apply_w(xp, wm) + apply_w(xm, wp)
    if bias is not None:
        z_plus = z_plus + np.maximum(bias, 0)
        z_minus = z_minus + np.minimum(bias, 0)

    rel_in = np.zeros_like(x)
    if rules.alpha != 0:
        s_plus = rules.alpha * rel_out / (z_plus + _TINY)
        if w is None:
            rel_in += xp * adjoint(s_plus)
        else:
            rel_in += xp * adjoint(s_plus, wp) + xm * adjoint(s_plus, wm)
    if rules.beta != 0:
        s_minus = rules.beta * rel_out / (z_minus - _TINY)
        if w is None:
            rel_in += xm * adjoint(s_minus)
        else:
            rel_in += xm * adjoint(s_minus, wp) + xp * adjoint(s_minus, wm)
    return rel_in


def relevance_pass(model: Model, trace: ForwardTrace, target_class: int,
                   rules: RuleConfig = None) -> RelevanceState:
    """Propagate the target logit back to the input.

    The trace must come from forward(..., capture=True) with batch size 1.
    """
    if rules is None:
        rules = RuleConfig()
    if trace is None:
        raise ValueError("relevance propagation needs a captured trace")
    if trace.input.shape[0] != 1:
        raise ValueError("relevance propagation expects batch size 1")
    if not (0 <= target_class < model.class_count):
        raise ValueError(
            f"target_class {target_class} out of range for "
            f"{model.class_count} classes"
        )

    layers = list(model.layers)
    start = model.output_layer
    if model.layer(start).kind == "softmax":
        # relevance starts at the logits, the softmax stays out of the pass
        start = model.layer(start).inputs[0]
        layers = [l for l in layers if l.name != model.output_layer]
        if start == INPUT:
            raise ModelError("softmax directly on the input has no logits",
                             model.output_layer)

    logits = trace.value(start)
    init = np.zeros_like(logits, dtype=np.float64)
    target_logit = float(logits[0, target_class, 0, 0])
    init[0, target_class, 0, 0] = target_logit
    rel = {start: init}

    for layer in reversed(layers):
        rel_out = rel.get(layer.name)
        if rel_out is None:
            continue  # dead branch
        if layer.kind == "softmax":
            raise ModelError(
                "softmax inside the graph cannot take part in relevance "
                "propagation", layer.name)
        if layer.name not in trace.outputs:
            raise ValueError(f"trace is missing layer '{layer.name}'")
        xs = [trace.value(s) for s in layer.inputs]
        rel_ins = _layer_relevance(layer, xs, trace, rel_out, rules)
        for src, r in zip(layer.inputs, rel_ins):
            if not np.isfinite(r).all():
                raise ModelError("non-finite relevance", layer.name)
            if src in rel:
                rel[src] = rel[src] + r
            else:
                rel[src] = r
    if INPUT not in rel:
        rel[INPUT] = np.zeros_like(trace.input, dtype=np.float64)
    return RelevanceState(relevances=rel, target_class=target_class,
                          output_relevance=target_logit)


def _layer_relevance(layer, xs, trace, rel_out, rules):
    x = xs[0]
    if layer.kind in ("conv2d", "dense", "avgpool", "global_avgpool"):
        return [_linear_relevance(layer, x, rel_out, rules)]
    if layer.kind == "relu":
        return [rel_out]
    if layer.kind == "maxpool":
        arg = trace.argmax.get(layer.name)
        if arg is None:
            raise ValueError(f"trace is missing argmax map for '{layer.name}'")
        return [ops.maxpool_scatter(rel_out, arg, x.shape, layer.kernel,
                                    layer.stride)]
    if layer.kind == "concat":
        sizes = [a.shape[1] for a in xs]
        splits = np.cumsum(sizes)[:-1]
        return list(np.split(rel_out, splits, axis=1))
    if layer.kind == "flatten":
        return [rel_out.reshape(x.shape)]
    raise ModelError(f"no relevance rule for kind '{layer.kind}'", layer.name)


def channel_collapse(relevance: np.ndarray) -> Heatmap:
    """Sum relevance over channels into a single-channel map.

    Accepts (c, h, w) or (1, c, h, w); the total sum is preserved.
    """
    relevance = np.asarray(relevance)
    if relevance.ndim == 4:
        if relevance.shape[0] != 1:
            raise ValueError("channel_collapse expects a single item")
        relevance = relevance[0]
    if relevance.ndim != 3:
        raise ValueError(f"expected (c,h,w) relevance, got {relevance.shape}")
    return Heatmap(values=relevance.sum(axis=0))


def lrp(model: Model, trace: ForwardTrace, target_class: int,
        rules: RuleConfig = None) -> Heatmap:
    """Full input-resolution heatmap for one traced input."""
    state = relevance_pass(model, trace, target_class, rules)
    hm = channel_collapse(state.relevances[INPUT])
    hm.provenance = {
        "model": model.name,
        "target_class": int(target_class),
        "output_relevance": state.output_relevance,
    }
    return hm


@dataclass
class ConservationReport:
    output_relevance: float
    input_sum: float
    relative_leak: float          # |input_sum - output| / max(|output|, tiny)
    layer_sums: dict              # layer name -> sum of relevance tensor
    layer_deviation: dict         # layer name -> relative deviation vs output


def relevance_conservation(state: RelevanceState, model: Model) -> ConservationReport:
    """Per-layer relevance sums and the input-vs-output leak.

    Per-layer deviations are meaningful on chain models; on branching
    graphs a single branch holds only its share, so the input/output leak
    is the authoritative number.
    """
    out_rel = state.output_relevance
    denom = max(abs(out_rel), _TINY)
    sums, devs = {}, {}
    for name, r in state.relevances.items():
        s = float(r.sum())
        sums[name] = s
        devs[name] = abs(s - out_rel) / denom
    input_sum = sums[INPUT]
    return ConservationReport(
        output_relevance=out_rel,
        input_sum=input_sum,
        relative_leak=abs(input_sum - out_rel) / denom,
        layer_sums=sums,
        layer_deviation=devs,
    )


def write_heatmap(hm: Heatmap, path) -> Path:
    """RHMP raster: magic + h, w (little-endian uint32) + float32 rows,
    with normalization state in a JSON sidecar at <path>.json."""
    path = Path(path)
    h, w = hm.values.shape
    header = HEATMAP_MAGIC + struct.pack("<2I", h, w)
    payload = np.ascontiguousarray(hm.values, dtype="<f4").tobytes()
    path.write_bytes(header + payload)
    sidecar = {
        "normalization": hm.normalization,
        "divisor": hm.divisor,
        "provenance": hm.provenance,
    }
    Path(str(path) + ".json").write_text(json.dumps(sidecar, indent=1))
    return path


def read_heatmap(path) -> Heatmap:
    path = Path(path)
    raw = path.read_bytes()
    if len(raw) < 12 or raw[:4] != HEATMAP_MAGIC:
        raise ValueError(f"{path} is not an RHMP heatmap raster")
    h, w = struct.unpack("<2I", raw[4:12])
    if len(raw) != 12 + h * w * 4:
        raise ValueError(
            f"{path}: payload is {len(raw) - 12} bytes, header implies {h * w * 4}"
        )
    values = np.frombuffer(raw[12:], dtype="<f4").reshape(h, w).copy()
    hm = Heatmap(values=values)
    sidecar = Path(str(path) + ".json")
    if sidecar.exists():
        meta = json.loads(sidecar.read_text())
        hm.normalization = meta.get("normalization", "raw")
        hm.divisor = float(meta.get("divisor", 1.0))
        hm.provenance = meta.get("provenance", {})
    return hm
