"""On-disk formats for models and raw tensors.

Model = JSON manifest (magic "RLVS-MODEL-1") plus one sidecar blob of
little-endian float32 weights, addressed by byte offsets. Tensor raster =
magic "RLVS" followed by b, c, h, w as little-endian uint32, then the
float32 payload in row-major (b, c, h, w) order.
"""

import json
import struct
from pathlib import Path

import numpy as np

from .layers import LayerSpec
from .model import Model

MODEL_MAGIC = "RLVS-MODEL-1"
TENSOR_MAGIC = b"RLVS"


class FormatError(ValueError):
    """Corrupt or inconsistent file contents."""


def save_model(model: Model, path) -> Path:
    """Write manifest JSON at `path` and the weight blob next to it.

    Round trip through load_model is bit-exact for weights and metadata.
    """
    path = Path(path)
    blob_path = path.with_suffix(".bin")
    chunks = []
    offset = 0
    layers_doc = []
    for layer in model.layers:
        entry = {
            "name": layer.name,
            "kind": layer.kind,
            "inputs": list(layer.inputs),
            "out_channels": layer.out_channels,
            "kernel": list(layer.kernel),
            "stride": list(layer.stride),
            "padding": list(layer.padding),
            "weights": {},
        }
        for key, arr in (("w", layer.weights), ("b", layer.bias)):
            if arr is None:
                continue
            raw = np.ascontiguousarray(arr, dtype="<f4").tobytes()
            entry["weights"][key] = {
                "shape": list(arr.shape),
                "offset": offset,
                "nbytes": len(raw),
            }
            chunks.append(raw)
            offset += len(raw)
        layers_doc.append(entry)
    manifest = {
        "magic": MODEL_MAGIC,
        "name": model.name,
        "seed": model.seed,
        "input_shape": list(model.input_shape),
        "class_count": model.class_count,
        "metadata": model.metadata,
        "blob": {"file": blob_path.name, "nbytes": offset},
        "layers": layers_doc,
    }
    path.parent.mkdir(parents=True, exist_ok=True)
    blob_path.write_bytes(b"".join(chunks))
    path.write_text(json.dumps(manifest, indent=1, sort_keys=True))
    return path


def load_model(path) -> Model:
    path = Path(path)
    try:
        manifest = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as e:
        raise FormatError(f"unreadable model manifest {path}: {e}") from e
    if manifest.get("magic") != MODEL_MAGIC:
        raise FormatError(
            f"bad magic in {path}: {manifest.get('magic')!r} "
            f"(expected {MODEL_MAGIC!r})"
        )
    blob_path = path.parent / manifest["blob"]["file"]
    blob = blob_path.read_bytes()
    if len(blob) != manifest["blob"]["nbytes"]:
        raise FormatError(
            f"blob {blob_path} is {len(blob)} bytes, manifest declares "
            f"{manifest['blob']['nbytes']}"
        )
    layers = []
    for entry in manifest["layers"]:
        arrays = {}
        for key, ref in entry["weights"].items():
            shape = tuple(ref["shape"])
            expected = int(np.prod(shape)) * 4
            if ref["nbytes"] != expected:
                raise FormatError(
                    f"layer '{entry['name']}' weight '{key}': shape {shape} "
                    f"needs {expected} bytes, manifest declares {ref['nbytes']}"
                )
            lo, hi = ref["offset"], ref["offset"] + ref["nbytes"]
            if hi > len(blob):
                raise FormatError(
                    f"layer '{entry['name']}' weight '{key}' extends past "
                    f"end of blob"
                )
            arrays[key] = np.frombuffer(blob[lo:hi], dtype="<f4").reshape(shape)
        layers.append(LayerSpec(
            entry["name"], entry["kind"], tuple(entry["inputs"]),
            out_channels=entry["out_channels"], kernel=entry["kernel"],
            stride=entry["stride"], padding=entry["padding"],
            weights=arrays.get("w"), bias=arrays.get("b"),
        ))
    return Model(
        layers=layers,
        input_shape=tuple(manifest["input_shape"]),
        class_count=manifest["class_count"],
        name=manifest["name"],
        seed=manifest["seed"],
        metadata=manifest["metadata"],
    )


def write_tensor(arr: np.ndarray, path) -> Path:
    """Raw raster: b"RLVS" + 4 little-endian uint32 dims + float32 payload."""
    arr = np.asarray(arr, dtype=np.float32)
    if arr.ndim != 4:
        raise ValueError(f"tensor raster is rank-4, got shape {arr.shape}")
    path = Path(path)
    header = TENSOR_MAGIC + struct.pack("<4I", *arr.shape)
    path.write_bytes(header + np.ascontiguousarray(arr, dtype="<f4").tobytes())
    return path


def read_tensor(path) -> np.ndarray:
    path = Path(path)
    raw = path.read_bytes()
    if len(raw) < 20 or raw[:4] != TENSOR_MAGIC:
        raise FormatError(f"{path} is not an RLVS tensor raster")
    shape = struct.unpack("<4I", raw[4:20])
    expected = 20 + int(np.prod(shape)) * 4
    if len(raw) != expected:
        raise FormatError(
            f"{path}: payload is {len(raw) - 20} bytes, header implies "
            f"{expected - 20}"
        )
    return np.frombuffer(raw[20:], dtype="<f4").reshape(shape).copy()
