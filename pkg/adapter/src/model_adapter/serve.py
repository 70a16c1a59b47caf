"""The request loop.

One JSON object per line on stdin, one reply per line on stdout, the
request id echoed back. The loop is single-threaded and answers strictly
in arrival order, so replies can never be reordered relative to ids.
Anything wrong with a request becomes an error reply; only EOF on stdin
(or a broken stdout pipe) ends the process.
"""

from __future__ import annotations

import json
import sys
from dataclasses import dataclass

import numpy as np

from .protocol import AdapterError, decode_image, encode_image

ROLES = ("classifier", "generator", "discriminator")


@dataclass(frozen=True)
class AdapterConfig:
    """What to serve and how to normalize inputs before the model sees them.

    Preprocessing is (image * scale - mean) / std per channel. The engine
    side of the protocol always works in [0, 1] tensors; whatever the
    wrapped model wants beyond that lives here.
    """

    role: str
    model: str
    height: int
    width: int
    class_count: int | None = None
    latent_dim: int | None = None
    scale: float = 1.0
    mean: tuple[float, float, float] = (0.0, 0.0, 0.0)
    std: tuple[float, float, float] = (1.0, 1.0, 1.0)

    def __post_init__(self):
        if self.role not in ROLES:
            raise AdapterError(f"unknown role {self.role!r}")
        if self.height < 1 or self.width < 1:
            raise AdapterError(f"input dims {self.height}x{self.width} "
                               f"must be positive")
        if not np.isfinite(self.scale) or self.scale == 0.0:
            raise AdapterError(f"scale {self.scale} must be finite and nonzero")
        if len(self.mean) != 3 or len(self.std) != 3:
            raise AdapterError("mean and std need one value per channel")
        if any(not np.isfinite(v) for v in self.mean + self.std):
            raise AdapterError("mean and std must be finite")
        if any(v == 0.0 for v in self.std):
            raise AdapterError("std values must be nonzero")


def preprocess(image: np.ndarray, config: AdapterConfig) -> np.ndarray:
    mean = np.asarray(config.mean, dtype=np.float64)
    std = np.asarray(config.std, dtype=np.float64)
    return (image * config.scale - mean) / std


def _hello_reply(config: AdapterConfig) -> dict:
    reply = {"height": config.height, "width": config.width}
    if config.role == "classifier":
        reply["class_count"] = config.class_count
    elif config.role == "generator":
        reply["latent_dim"] = config.latent_dim
    return reply


def _image_for(op: str, request: dict, config: AdapterConfig) -> np.ndarray:
    image = decode_image(request)
    want = (config.height, config.width, 3)
    if image.shape != want:
        raise AdapterError(
            f"{op} expected a {want[0]}x{want[1]}x{want[2]} image, got "
            f"{image.shape[0]}x{image.shape[1]}x{image.shape[2]}")
    return preprocess(image, config)


def _latent_for(request: dict, config: AdapterConfig) -> np.ndarray:
    z = request.get("z")
    if not isinstance(z, list):
        raise AdapterError("generate request carries no latent list 'z'")
    try:
        vec = np.asarray(z, dtype=np.float64)
    except (TypeError, ValueError) as exc:
        raise AdapterError(f"latent vector is not numeric: {exc}") from exc
    if vec.ndim != 1 or vec.size != config.latent_dim:
        raise AdapterError(f"generator wants {config.latent_dim} latent "
                           f"values, got {vec.size}")
    if not np.all(np.isfinite(vec)):
        raise AdapterError("latent vector holds non-finite values")
    return vec


def _dispatch(model, config: AdapterConfig, request: dict) -> dict:
    op = request.get("op")
    if op == "hello":
        return _hello_reply(config)
    if op == "score":
        if config.role != "classifier":
            raise AdapterError(f"op 'score' is not served in role "
                               f"{config.role!r}")
        scores = model.score(_image_for("score", request, config))
        return {"scores": [float(v) for v in scores]}
    if op == "generate":
        if config.role != "generator":
            raise AdapterError(f"op 'generate' is not served in role "
                               f"{config.role!r}")
        return encode_image(model.generate(_latent_for(request, config)))
    if op == "discriminate":
        if config.role not in ("generator", "discriminator"):
            raise AdapterError(f"op 'discriminate' is not served in role "
                               f"{config.role!r}")
        value = model.discriminate(_image_for("discriminate", request, config))
        return {"score": float(value)}
    raise AdapterError(f"unknown op {op!r}")


def serve(model, config: AdapterConfig, stdin=None, stdout=None) -> int:
    """Answer requests until stdin closes. Returns the process exit code."""
    reader = sys.stdin if stdin is None else stdin
    writer = sys.stdout if stdout is None else stdout
    for raw in reader:
        line = raw.strip()
        if not line:
            continue
        rid = None
        try:
            request = json.loads(line)
            if not isinstance(request, dict):
                raise AdapterError("request is not a JSON object")
            if isinstance(request.get("id"), int):
                rid = request["id"]
            reply = _dispatch(model, config, request)
            reply["id"] = rid
        except json.JSONDecodeError as exc:
            reply = {"id": rid, "error": f"request is not valid JSON: {exc}"}
        except AdapterError as exc:
            reply = {"id": rid, "error": str(exc)}
        except Exception as exc:  # survive anything a request can trigger
            reply = {"id": rid, "error": f"{type(exc).__name__}: {exc}"}
        try:
            writer.write(json.dumps(reply) + "\n")
            writer.flush()
        except BrokenPipeError:
            return 0
    return 0
