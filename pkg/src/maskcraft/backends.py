"""Classifier scoring backends.

A backend exposes `class_count`, `input_shape` ((H, W) or None for any size),
and `score(image) -> np.ndarray` of per-class scores. Builtins are synthetic
and in-process; external backends bridge a child process over the wire
protocol. The engine never looks inside a backend: input in, scores out.
"""

from __future__ import annotations

import logging
import shlex

import numpy as np

from ._validation import check_image_like
from .exceptions import BackendError, DimensionError, ProtocolError
from .wire import DEFAULT_TIMEOUT, WireClient, encode_image_payload

log = logging.getLogger(__name__)


def _check_input_shape(backend, image: np.ndarray) -> None:
    shape = getattr(backend, "input_shape", None)
    if shape is not None and tuple(image.shape[:2]) != tuple(shape):
        raise DimensionError(f"backend expects {shape[0]}x{shape[1]} input, "
                             f"got {image.shape[0]}x{image.shape[1]}")


class PlantedClassifier:
    """Two-class synthetic classifier keyed to a planted rectangle.

    Class 0 responds to the contrast between mean intensity inside the
    rectangle and outside it, squashed through a logistic with the given
    sharpness; class 1 is its complement. A uniform image scores exactly
    0.5 / 0.5. Accepts any image large enough to contain the rectangle.
    """

    class_count = 2
    input_shape = None

    def __init__(self, rect: tuple[int, int, int, int], sharpness: float = 10.0):
        top, left, height, width = (int(v) for v in rect)
        if height < 1 or width < 1 or top < 0 or left < 0:
            raise ValueError(f"rectangle {rect} must have positive size and "
                             "non-negative origin")
        self.rect = (top, left, height, width)
        self.sharpness = float(sharpness)

    def score(self, image) -> np.ndarray:
        img = check_image_like(image)
        top, left, height, width = self.rect
        if top + height > img.shape[0] or left + width > img.shape[1]:
            raise DimensionError(f"rectangle {self.rect} falls outside image "
                                 f"{img.shape[0]}x{img.shape[1]}")
        inside = img[top:top + height, left:left + width]
        total = img.sum()
        inside_sum = inside.sum()
        outside_count = img.size - inside.size
        mean_in = inside_sum / inside.size
        # an all-covering rectangle leaves nothing outside; treat that as zero
        mean_out = (total - inside_sum) / outside_count if outside_count else 0.0
        class0 = 1.0 / (1.0 + np.exp(-self.sharpness * (mean_in - mean_out)))
        return np.array([class0, 1.0 - class0], dtype=np.float64)


class ConstantClassifier:
    """Returns a fixed score vector no matter the input. Useful in tests."""

    input_shape = None

    def __init__(self, values):
        arr = np.asarray(values, dtype=np.float64).ravel()
        if arr.size < 1:
            raise ValueError("need at least one class score")
        if not np.all(np.isfinite(arr)):
            raise ValueError("class scores must be finite")
        self.values = arr
        self.class_count = int(arr.size)

    def score(self, image) -> np.ndarray:
        check_image_like(image)
        return self.values.copy()


class ExternalClassifier:
    """Classifier served by a child process over the stdio wire protocol."""

    def __init__(self, command, class_count: int | None = None,
                 timeout: float = DEFAULT_TIMEOUT):
        self._client = WireClient(command, timeout=timeout)
        hello = self._client.hello()
        try:
            self.class_count = int(hello["class_count"])
            self.input_shape = (int(hello["height"]), int(hello["width"]))
        except (KeyError, TypeError, ValueError) as exc:
            raise ProtocolError(f"handshake reply missing fields: {hello!r}") from exc
        if self.class_count < 1:
            raise ProtocolError(f"handshake declared class_count {self.class_count}")
        if class_count is not None and class_count != self.class_count:
            raise BackendError(f"backend declares {self.class_count} classes, "
                               f"expected {class_count}")

    def score(self, image) -> np.ndarray:
        img = check_image_like(image)
        _check_input_shape(self, img)
        payload = {"op": "score"}
        payload.update(encode_image_payload(img))
        reply = self._client.request(payload)
        scores = reply.get("scores")
        if not isinstance(scores, list):
            raise ProtocolError(f"score reply carries no score list: {reply!r}")
        arr = np.asarray(scores, dtype=np.float64)
        if arr.ndim != 1 or arr.size != self.class_count:
            raise ProtocolError(f"backend sent {arr.size} scores, declared "
                                f"{self.class_count} classes")
        if not np.all(np.isfinite(arr)):
            raise ProtocolError("backend sent non-finite scores")
        return arr

    def close(self) -> None:
        self._client.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc_info):
        self.close()


def spawn_external(command, class_count: int | None = None,
                   timeout: float = DEFAULT_TIMEOUT) -> ExternalClassifier:
    """Spawn and handshake an external classifier process."""
    return ExternalClassifier(command, class_count=class_count, timeout=timeout)


def score_batch(backend, images) -> list[np.ndarray]:
    """Score a sequence of same-shaped images, tagging failures by index."""
    images = list(images)
    if not images:
        raise ValueError("score_batch needs at least one image")
    first_hw = np.asarray(images[0]).shape[:2]
    results = []
    for index, image in enumerate(images):
        if np.asarray(image).shape[:2] != first_hw:
            raise DimensionError(f"batch image {index} has shape "
                                 f"{np.asarray(image).shape[:2]}, first image "
                                 f"has {first_hw}")
        try:
            results.append(backend.score(image))
        except BackendError as exc:
            raise BackendError(f"scoring failed at batch index {index}: {exc}") from exc
    return results


def _strip_quotes(text: str) -> str:
    text = text.strip()
    if len(text) >= 2 and text[0] == text[-1] and text[0] in "'\"":
        return text[1:-1]
    return text


def parse_backend(descriptor: str, timeout: float = DEFAULT_TIMEOUT):
    """Build a classifier backend from its command-line descriptor.

    Syntax:
      builtin-planted:top,left,height,width
      builtin-constant:v1,v2,...
      exec:"command arg ..."
    """
    kind, sep, rest = descriptor.partition(":")
    if not sep:
        raise ValueError(f"backend descriptor {descriptor!r} lacks ':'")
    if kind == "builtin-planted":
        parts = rest.split(",")
        if len(parts) != 4:
            raise ValueError("builtin-planted takes top,left,height,width")
        try:
            rect = tuple(int(p) for p in parts)
        except ValueError as exc:
            raise ValueError(f"builtin-planted rectangle {rest!r} is not four "
                             "integers") from exc
        return PlantedClassifier(rect)
    if kind == "builtin-constant":
        try:
            values = [float(p) for p in rest.split(",") if p != ""]
        except ValueError as exc:
            raise ValueError(f"builtin-constant scores {rest!r} are not numbers") from exc
        return ConstantClassifier(values)
    if kind == "exec":
        command = shlex.split(_strip_quotes(rest))
        if not command:
            raise ValueError("exec backend needs a command")
        return spawn_external(command, timeout=timeout)
    raise ValueError(f"unknown backend kind {kind!r}")
