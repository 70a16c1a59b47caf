"""File formats: PNG/PPM image ingestion, raw float32 grids, heatmap export.

Saliency grids travel as raw little-endian float32, row-major, with a JSON
sidecar carrying the dimensions. Heatmaps are 8-bit grayscale PNGs after
min-max normalization. Ingested images are 8-bit and divided by 255.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np
from PIL import Image

from ._validation import check_grid, check_image_like
from .exceptions import DimensionError

_ALLOWED_FORMATS = {"PNG", "PPM"}


def load_image(path) -> np.ndarray:
    """Read an 8-bit PNG or binary PPM as an (H, W, 3) float array in [0, 1].

    Grayscale inputs are promoted to three identical channels. Other file
    formats are rejected rather than guessed at.
    """
    path = Path(path)
    with Image.open(path) as img:
        fmt = img.format
        if fmt not in _ALLOWED_FORMATS:
            raise ValueError(f"unsupported image format {fmt!r} for {path.name}; "
                             "expected PNG or PPM")
        if img.mode == "L":
            arr = np.asarray(img, dtype=np.float64)
            arr = np.repeat(arr[:, :, None], 3, axis=2)
        else:
            arr = np.asarray(img.convert("RGB"), dtype=np.float64)
    return arr / 255.0


def save_image_png(image, path) -> Path:
    """Write an (H, W, 3) float image as 8-bit RGB PNG, clamping to [0, 1]."""
    arr = check_image_like(image)
    data = np.clip(arr, 0.0, 1.0)
    data = np.round(data * 255.0).astype(np.uint8)
    path = Path(path)
    Image.fromarray(data, mode="RGB").save(path, format="PNG")
    return path


def sidecar_path(path) -> Path:
    """The JSON sidecar sitting next to a raw float32 grid file."""
    return Path(path).with_suffix(".json")


def save_float_grid(grid, path) -> Path:
    """Write a 2-D grid as raw little-endian float32 plus a JSON sidecar."""
    arr = check_grid(grid)
    path = Path(path)
    path.write_bytes(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    meta = {"height": int(arr.shape[0]), "width": int(arr.shape[1])}
    sidecar_path(path).write_text(json.dumps(meta) + "\n")
    return path


def load_float_grid(path) -> np.ndarray:
    """Read a raw float32 grid using the dimensions from its JSON sidecar."""
    path = Path(path)
    meta = json.loads(sidecar_path(path).read_text())
    height, width = int(meta["height"]), int(meta["width"])
    raw = np.frombuffer(path.read_bytes(), dtype="<f4")
    if raw.size != height * width:
        raise DimensionError(f"{path.name} holds {raw.size} values, sidecar says "
                             f"{height}x{width}")
    return raw.reshape(height, width).astype(np.float64)


def save_heatmap_png(grid, path) -> Path:
    """Write a grid as an 8-bit grayscale PNG after min-max normalization."""
    arr = check_grid(grid)
    span = arr.max() - arr.min()
    if span > 0.0:
        norm = (arr - arr.min()) / span
    else:
        norm = np.zeros_like(arr)
    data = np.round(norm * 255.0).astype(np.uint8)
    path = Path(path)
    Image.fromarray(data, mode="L").save(path, format="PNG")
    return path
