"""Payload encoding for the wire protocol.

Images travel as base64 of raw little-endian float32 values, row-major,
channels last, with the shape spelled out alongside so byte counts can be
checked before trusting the data.
"""

from __future__ import annotations

import base64
import binascii

import numpy as np


class AdapterError(RuntimeError):
    """Anything that should turn into an error reply or a startup failure."""


def encode_image(image: np.ndarray) -> dict:
    arr = np.ascontiguousarray(image, dtype="<f4")
    return {
        "shape": [int(d) for d in arr.shape],
        "data": base64.b64encode(arr.tobytes()).decode("ascii"),
    }


def decode_image(request: dict) -> np.ndarray:
    """Image from a request's shape/data fields, as float64 (H, W, C)."""
    shape = request.get("shape")
    data = request.get("data")
    if not isinstance(shape, list) or not isinstance(data, str):
        raise AdapterError("request carries no image payload (shape + data)")
    try:
        dims = tuple(int(d) for d in shape)
    except (TypeError, ValueError) as exc:
        raise AdapterError(f"bad payload shape {shape!r}") from exc
    if len(dims) != 3 or any(d < 1 for d in dims):
        raise AdapterError(f"payload shape {dims} is not a positive HxWxC")
    try:
        raw = base64.b64decode(data, validate=True)
    except (binascii.Error, ValueError) as exc:
        raise AdapterError(f"payload data is not valid base64: {exc}") from exc
    expect = dims[0] * dims[1] * dims[2] * 4
    if len(raw) != expect:
        raise AdapterError(f"payload holds {len(raw)} bytes, "
                           f"shape {dims} needs {expect}")
    return np.frombuffer(raw, dtype="<f4").reshape(dims).astype(np.float64)
