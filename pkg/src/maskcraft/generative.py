"""Generator and discriminator backends for latent-space reconstruction.

A generator exposes `latent_dim`, `height`, `width`, and
`generate(z) -> (H, W, 3)`. A discriminator exposes
`discriminate(image) -> float` (higher means more real). Builtins are
synthetic; the external backend drives a child process over the same wire
protocol as external classifiers, extended with generate/discriminate ops.
"""

from __future__ import annotations

import shlex
from pathlib import Path

import numpy as np

from ._validation import check_image_like
from .exceptions import DimensionError, ProtocolError
from .grids import make_rng
from .wire import DEFAULT_TIMEOUT, WireClient, decode_image_payload, encode_image_payload


def _check_latent(generator, z) -> np.ndarray:
    vec = np.asarray(z, dtype=np.float64).ravel()
    if vec.size != generator.latent_dim:
        raise DimensionError(f"latent vector has {vec.size} entries, generator "
                             f"wants {generator.latent_dim}")
    if not np.all(np.isfinite(vec)):
        raise ValueError("latent vector contains non-finite values")
    return vec


class LinearGenerator:
    """G(z) = A z + offset with a fixed seeded A.

    Outputs are genuinely linear in z and may leave [0, 1]; they are only
    clamped when exported to PNG. The `matrix` and `offset` attributes are
    public so closed-form least-squares references can use them.
    """

    def __init__(self, latent_dim: int = 64, height: int = 64, width: int = 64,
                 seed: int = 0, scale: float = 0.05, offset: float = 0.5):
        if latent_dim < 1:
            raise ValueError(f"latent_dim {latent_dim} must be >= 1")
        if height < 1 or width < 1:
            raise ValueError(f"output {height}x{width} must be positive")
        self.latent_dim = int(latent_dim)
        self.height = int(height)
        self.width = int(width)
        rng = make_rng(seed)
        self.matrix = rng.standard_normal((self.height * self.width * 3,
                                           self.latent_dim)) * float(scale)
        self.offset = float(offset)

    def generate(self, z) -> np.ndarray:
        vec = _check_latent(self, z)
        flat = self.matrix @ vec + self.offset
        return flat.reshape(self.height, self.width, 3)


class ExemplarGenerator:
    """Convex combinations of stored exemplar images, weighted by softmax(z).

    The latent dimension equals the number of exemplars, so outputs always
    stay inside the exemplars' value range.
    """

    def __init__(self, exemplars):
        stack = [check_image_like(e, f"exemplar {i}") for i, e in enumerate(exemplars)]
        if not stack:
            raise ValueError("need at least one exemplar image")
        shape = stack[0].shape
        for i, e in enumerate(stack):
            if e.shape != shape:
                raise DimensionError(f"exemplar {i} has shape {e.shape}, first "
                                     f"has {shape}")
        self.exemplars = np.stack(stack)
        self.latent_dim = len(stack)
        self.height = int(shape[0])
        self.width = int(shape[1])

    def generate(self, z) -> np.ndarray:
        vec = _check_latent(self, z)
        shifted = np.exp(vec - vec.max())
        weights = shifted / shifted.sum()
        return np.tensordot(weights, self.exemplars, axes=1)


class ConstantDiscriminator:
    """Judges every image equally real. The do-nothing discriminator."""

    def __init__(self, value: float = 0.5):
        self.value = float(value)

    def discriminate(self, image) -> float:
        check_image_like(image)
        return self.value


class ExternalGenerative:
    """Generator (and optionally discriminator) in a child process.

    The handshake declares latent_dim and output dims. discriminate() is
    forwarded to the same process; a backend that does not support it will
    answer with an error reply, which surfaces as a BackendError.
    """

    def __init__(self, command, timeout: float = DEFAULT_TIMEOUT):
        self._client = WireClient(command, timeout=timeout)
        hello = self._client.hello()
        try:
            self.latent_dim = int(hello["latent_dim"])
            self.height = int(hello["height"])
            self.width = int(hello["width"])
        except (KeyError, TypeError, ValueError) as exc:
            raise ProtocolError(f"handshake reply missing fields: {hello!r}") from exc
        if self.latent_dim < 1 or self.height < 1 or self.width < 1:
            raise ProtocolError(f"handshake declared degenerate dims: {hello!r}")

    def generate(self, z) -> np.ndarray:
        vec = _check_latent(self, z)
        reply = self._client.request({"op": "generate", "z": [float(v) for v in vec]})
        image = decode_image_payload(reply, "generate")
        if image.shape != (self.height, self.width, 3):
            raise ProtocolError(f"generator sent shape {image.shape}, declared "
                                f"({self.height}, {self.width}, 3)")
        return image

    def discriminate(self, image) -> float:
        img = check_image_like(image)
        payload = {"op": "discriminate"}
        payload.update(encode_image_payload(img))
        reply = self._client.request(payload)
        score = reply.get("score")
        if not isinstance(score, (int, float)) or not np.isfinite(score):
            raise ProtocolError(f"discriminate reply carries no finite score: {reply!r}")
        return float(score)

    def close(self) -> None:
        self._client.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc_info):
        self.close()


def _strip_quotes(text: str) -> str:
    text = text.strip()
    if len(text) >= 2 and text[0] == text[-1] and text[0] in "'\"":
        return text[1:-1]
    return text


def parse_generative(descriptor: str, timeout: float = DEFAULT_TIMEOUT):
    """Build a generative backend from its command-line descriptor.

    Syntax:
      builtin-linear:latent_dim,height,width[,seed]
      builtin-exemplar:<directory of PNG/PPM images>
      exec:"command arg ..."

    Returns (generator, discriminator); builtins pair with a constant
    discriminator, external processes serve both roles themselves.
    """
    kind, sep, rest = descriptor.partition(":")
    if not sep:
        raise ValueError(f"generator descriptor {descriptor!r} lacks ':'")
    if kind == "builtin-linear":
        parts = rest.split(",")
        if len(parts) not in (3, 4):
            raise ValueError("builtin-linear takes latent_dim,height,width[,seed]")
        try:
            numbers = [int(p) for p in parts]
        except ValueError as exc:
            raise ValueError(f"builtin-linear parameters {rest!r} are not "
                             "integers") from exc
        seed = numbers[3] if len(numbers) == 4 else 0
        generator = LinearGenerator(latent_dim=numbers[0], height=numbers[1],
                                    width=numbers[2], seed=seed)
        return generator, ConstantDiscriminator()
    if kind == "builtin-exemplar":
        from .image_io import load_image
        directory = Path(rest)
        if not directory.is_dir():
            raise ValueError(f"builtin-exemplar needs a directory, got {rest!r}")
        paths = sorted(p for p in directory.iterdir()
                       if p.suffix.lower() in (".png", ".ppm"))
        if not paths:
            raise ValueError(f"no PNG/PPM exemplars found in {rest!r}")
        generator = ExemplarGenerator([load_image(p) for p in paths])
        return generator, ConstantDiscriminator()
    if kind == "exec":
        command = shlex.split(_strip_quotes(rest))
        if not command:
            raise ValueError("exec generator needs a command")
        backend = ExternalGenerative(command, timeout=timeout)
        return backend, backend
    raise ValueError(f"unknown generator kind {kind!r}")
