"""Overlay rendering: diverging relevance colors over the grayscaled image.

Colormap: -1 maps to saturated blue, 0 to the untouched gray base, +1 to
saturated red, piecewise-linear through white. Blending uses

    out = (1 - alpha*|v|) * gray + alpha*|v| * color(v)

so zero relevance leaves the base image unchanged and |v| = 1 with
alpha = 1 gives the pure endpoint color. Output bytes are deterministic.
"""

from pathlib import Path

import numpy as np
from PIL import Image

from .tiling import TileHeatmap
from .lrp import Heatmap

# Rec.601 luminance
_LUMA = np.array([0.299, 0.587, 0.114])


def _map_values(m):
    if isinstance(m, (Heatmap, TileHeatmap)):
        return m.values
    return np.asarray(m, dtype=np.float32)


def diverging_colors(values: np.ndarray) -> np.ndarray:
    """(h, w) values in [-1, 1] -> (h, w, 3) float colors in [0, 1]."""
    v = np.clip(values, -1.0, 1.0)
    pos = np.maximum(v, 0.0)
    neg = np.maximum(-v, 0.0)
    rgb = np.empty(v.shape + (3,), dtype=np.float64)
    rgb[..., 0] = 1.0 - neg          # red channel fades under blue
    rgb[..., 1] = 1.0 - pos - neg    # green fades either way
    rgb[..., 2] = 1.0 - pos
    return rgb


def render(heatmap, base_image: np.ndarray, alpha: float = 0.6) -> np.ndarray:
    """Blend a normalized heatmap over the grayscale of base_image.

    base_image: (h, w, 3) uint8 RGB. Returns (h, w, 3) uint8 RGB.
    """
    values = _map_values(heatmap)
    base = np.asarray(base_image)
    if base.ndim != 3 or base.shape[2] != 3:
        raise ValueError(f"base image must be (h,w,3) RGB, got {base.shape}")
    if values.shape != base.shape[:2]:
        raise ValueError(
            f"heatmap shape {values.shape} does not match image "
            f"{base.shape[:2]}"
        )
    if not 0.0 <= alpha <= 1.0:
        raise ValueError("alpha must lie in [0, 1]")
    gray = (base.astype(np.float64) @ _LUMA) / 255.0
    gray = np.repeat(gray[:, :, None], 3, axis=2)
    color = diverging_colors(values)
    a = (alpha * np.abs(np.clip(values, -1.0, 1.0)))[:, :, None]
    out = (1.0 - a) * gray + a * color
    return np.rint(np.clip(out, 0.0, 1.0) * 255.0).astype(np.uint8)


def write_png(image: np.ndarray, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(np.asarray(image, dtype=np.uint8), mode="RGB").save(
        path, format="PNG")
    return path


def read_png(path) -> np.ndarray:
    with Image.open(path) as img:
        return np.asarray(img.convert("RGB"))


def image_to_tensor(image: np.ndarray) -> np.ndarray:
    """(h, w, 3) uint8 -> (3, h, w) float32 in [0, 1]."""
    arr = np.asarray(image, dtype=np.float32) / 255.0
    return np.ascontiguousarray(arr.transpose(2, 0, 1))


def tensor_to_image(tensor: np.ndarray) -> np.ndarray:
    """(3, h, w) float in [0, 1] -> (h, w, 3) uint8."""
    arr = np.asarray(tensor)
    if arr.ndim == 4:
        arr = arr[0]
    arr = np.rint(np.clip(arr, 0.0, 1.0) * 255.0).astype(np.uint8)
    return np.ascontiguousarray(arr.transpose(1, 2, 0))
