"""Coarse-resolution explanation baselines.

Both emit a CoarseMap: the native low-resolution grid plus an upsampled
raster at input size. Probability maps are per-patch class probabilities
(blocky nearest-neighbor upsample); Grad-CAM lives at the resolution of
the chosen feature map (bilinear upsample).
"""

from dataclasses import dataclass

import numpy as np

from .nn import ops
from .nn.layers import ModelError
from .nn.model import ForwardTrace, Model, backward, forward, softmax_probs


@dataclass
class CoarseMap:
    native: np.ndarray      # (gh, gw) float32
    upsampled: np.ndarray   # (h, w) float32
    method: str             # "probability_map" | "gradcam"
    target_class: int

    def __post_init__(self):
        self.native = np.asarray(self.native, dtype=np.float32)
        self.upsampled = np.asarray(self.upsampled, dtype=np.float32)


def probability_map(model: Model, tile: np.ndarray, patch_size: int,
                    stride: int, target_class: int) -> CoarseMap:
    """Per-patch softmax probability of the target class on a patch grid.

    tile: (c, h, w). Grid cell (i, j) is the patch at (i*stride, j*stride);
    the upsampled raster repeats cells blockwise to tile size.
    """
    tile = np.asarray(tile, dtype=np.float32)
    if tile.ndim != 3:
        raise ValueError(f"tile must be (c,h,w), got shape {tile.shape}")
    c, h, w = tile.shape
    if h < patch_size or w < patch_size:
        raise ValueError(
            f"patch grid empty: tile {h}x{w} smaller than patch {patch_size}"
        )
    gh = (h - patch_size) // stride + 1
    gw = (w - patch_size) // stride + 1
    patches = np.empty((gh * gw, c, patch_size, patch_size), dtype=np.float32)
    for i in range(gh):
        for j in range(gw):
            y, x = i * stride, j * stride
            patches[i * gw + j] = tile[:, y : y + patch_size, x : x + patch_size]
    logits, _ = forward(model, patches)
    probs = softmax_probs(logits)[:, target_class, 0, 0]
    native = probs.reshape(gh, gw).astype(np.float32)
    return CoarseMap(
        native=native,
        upsampled=ops.upsample_nearest(native, h, w),
        method="probability_map",
        target_class=target_class,
    )


def gradcam(model: Model, trace: ForwardTrace, target_class: int,
            layer: str = None) -> CoarseMap:
    """Gradient-weighted activation map at a convolutional layer.

    Channel weights are the spatial mean of d(logit_target)/d(feature map);
    the map is ReLU of the weighted channel sum, bilinearly upsampled to
    input size. Defaults to the last convolutional layer.
    """
    if layer is None:
        layer = model.last_conv_layer()
    spec = model.layer(layer)
    feat = trace.outputs[layer]
    if feat.ndim != 4 or feat.shape[2] < 1 or feat.shape[3] < 1 or spec.kind == "dense":
        raise ModelError("layer has no spatial dims", layer)
    if trace.input.shape[0] != 1:
        raise ValueError("gradcam expects batch size 1")
    out_grad = np.zeros_like(trace.logits)
    out_grad[0, target_class, 0, 0] = 1.0
    grads = backward(model, trace, out_grad)
    g = grads.activations.get(layer)
    if g is None:
        g = np.zeros_like(feat)
    weights = g[0].mean(axis=(1, 2))
    cam = np.tensordot(weights, feat[0], axes=(0, 0))
    cam = np.maximum(cam, 0)
    h, w = trace.input.shape[2:]
    return CoarseMap(
        native=cam.astype(np.float32),
        upsampled=ops.upsample_bilinear(cam.astype(np.float64), h, w),
        method="gradcam",
        target_class=target_class,
    )
