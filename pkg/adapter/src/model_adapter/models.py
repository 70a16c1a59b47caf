"""Model loading.

Two kinds of model back the adapter: the builtin "echo" test models, which
exist so the protocol can be exercised without any weights on disk, and
.npz archives holding small linear models. Loading validates that the
declared input dims match what the weights expect, so a bad configuration
dies at startup instead of mid-conversation.

.npz key conventions:
  classifier     weights (features, classes), optional bias (classes,)
  generator      matrix (features, latent_dim), optional offset (features,),
                 optional disc_weights (features,) + disc_bias ()
  discriminator  weights (features,), optional bias ()

features is always height * width * 3.
"""

from __future__ import annotations

from dataclasses import replace

import numpy as np

from .protocol import AdapterError

ROLES = ("classifier", "generator", "discriminator")

ECHO_CLASSES = 3
ECHO_LATENT_DIM = 8


def _sigmoid(t: float) -> float:
    return float(0.5 * (1.0 + np.tanh(0.5 * t)))


def _softmax(logits: np.ndarray) -> np.ndarray:
    shifted = np.exp(logits - logits.max())
    return shifted / shifted.sum()


class EchoClassifier:
    """Scores are the per-channel means of the (preprocessed) image."""

    class_count = ECHO_CLASSES

    def score(self, image: np.ndarray) -> np.ndarray:
        return image.reshape(-1, image.shape[-1]).mean(axis=0)


class EchoGenerator:
    """Tiles the latent vector across the image, cycling through its values."""

    def __init__(self, latent_dim: int, height: int, width: int):
        self.latent_dim = int(latent_dim)
        self.height = int(height)
        self.width = int(width)

    def generate(self, z: np.ndarray) -> np.ndarray:
        flat = np.resize(np.asarray(z, dtype=np.float64),
                         self.height * self.width * 3)
        return flat.reshape(self.height, self.width, 3)

    def discriminate(self, image: np.ndarray) -> float:
        return float(image.mean())


class EchoDiscriminator:
    def discriminate(self, image: np.ndarray) -> float:
        return float(image.mean())


class LinearClassifier:
    """softmax(flat_image @ weights + bias)."""

    def __init__(self, weights: np.ndarray, bias: np.ndarray):
        self.weights = weights
        self.bias = bias
        self.class_count = int(weights.shape[1])

    def score(self, image: np.ndarray) -> np.ndarray:
        return _softmax(image.ravel() @ self.weights + self.bias)


class AffineGenerator:
    """matrix @ z + offset, reshaped to the configured image dims."""

    def __init__(self, matrix, offset, height, width,
                 disc_weights=None, disc_bias=0.0):
        self.matrix = matrix
        self.offset = offset
        self.height = int(height)
        self.width = int(width)
        self.latent_dim = int(matrix.shape[1])
        self.disc_weights = disc_weights
        self.disc_bias = float(disc_bias)

    def generate(self, z: np.ndarray) -> np.ndarray:
        flat = self.matrix @ np.asarray(z, dtype=np.float64) + self.offset
        return flat.reshape(self.height, self.width, 3)

    def discriminate(self, image: np.ndarray) -> float:
        if self.disc_weights is None:
            raise AdapterError("this model carries no discriminator weights")
        return _sigmoid(image.ravel() @ self.disc_weights + self.disc_bias)


class LinearDiscriminator:
    def __init__(self, weights: np.ndarray, bias: float):
        self.weights = weights
        self.bias = float(bias)

    def discriminate(self, image: np.ndarray) -> float:
        return _sigmoid(image.ravel() @ self.weights + self.bias)


def load_model(config):
    """Model object for the config, plus the config with counts filled in.

    Raises AdapterError when the file cannot be read, lacks the keys the
    role needs, or disagrees with the declared dims or counts.
    """
    if config.model == "echo":
        return _load_echo(config)
    return _load_npz(config)


def _load_echo(config):
    if config.role == "classifier":
        if config.class_count not in (None, ECHO_CLASSES):
            raise AdapterError(f"the echo classifier always has "
                               f"{ECHO_CLASSES} classes, not "
                               f"{config.class_count}")
        return EchoClassifier(), replace(config, class_count=ECHO_CLASSES)
    if config.role == "generator":
        dim = ECHO_LATENT_DIM if config.latent_dim is None else config.latent_dim
        if dim < 1:
            raise AdapterError(f"latent_dim {dim} must be >= 1")
        model = EchoGenerator(dim, config.height, config.width)
        return model, replace(config, latent_dim=dim)
    return EchoDiscriminator(), config


def _require(archive, key: str):
    if key not in archive:
        raise AdapterError(f"model file lacks {key!r}; it holds "
                           f"{sorted(archive.keys())}")
    return np.asarray(archive[key], dtype=np.float64)


def _check_features(name: str, got: int, config) -> None:
    want = config.height * config.width * 3
    if got != want:
        raise AdapterError(f"{name} expects {got} input values, but "
                           f"{config.height}x{config.width}x3 gives {want}")


def _load_npz(config):
    try:
        archive = np.load(config.model)
    except Exception as exc:
        raise AdapterError(f"cannot load model {config.model!r}: {exc}") from exc

    if config.role == "classifier":
        weights = _require(archive, "weights")
        if weights.ndim != 2:
            raise AdapterError(f"classifier weights must be 2-D, "
                               f"got shape {weights.shape}")
        _check_features("classifier weights", weights.shape[0], config)
        classes = int(weights.shape[1])
        bias = (np.asarray(archive["bias"], dtype=np.float64)
                if "bias" in archive else np.zeros(classes))
        if bias.shape != (classes,):
            raise AdapterError(f"classifier bias shape {bias.shape} does not "
                               f"match {classes} classes")
        if config.class_count is not None and config.class_count != classes:
            raise AdapterError(f"model has {classes} classes, "
                               f"--classes says {config.class_count}")
        return (LinearClassifier(weights, bias),
                replace(config, class_count=classes))

    if config.role == "generator":
        matrix = _require(archive, "matrix")
        if matrix.ndim != 2:
            raise AdapterError(f"generator matrix must be 2-D, "
                               f"got shape {matrix.shape}")
        _check_features("generator matrix", matrix.shape[0], config)
        dim = int(matrix.shape[1])
        offset = (np.asarray(archive["offset"], dtype=np.float64)
                  if "offset" in archive else np.zeros(matrix.shape[0]))
        if offset.shape != (matrix.shape[0],):
            raise AdapterError(f"generator offset shape {offset.shape} does "
                               f"not match {matrix.shape[0]} outputs")
        if config.latent_dim is not None and config.latent_dim != dim:
            raise AdapterError(f"model has latent_dim {dim}, "
                               f"--latent-dim says {config.latent_dim}")
        disc_weights = None
        disc_bias = 0.0
        if "disc_weights" in archive:
            disc_weights = np.asarray(archive["disc_weights"], dtype=np.float64)
            _check_features("disc_weights", disc_weights.size, config)
            disc_weights = disc_weights.ravel()
            disc_bias = float(archive["disc_bias"]) if "disc_bias" in archive else 0.0
        model = AffineGenerator(matrix, offset, config.height, config.width,
                                disc_weights=disc_weights, disc_bias=disc_bias)
        return model, replace(config, latent_dim=dim)

    weights = _require(archive, "weights")
    _check_features("discriminator weights", weights.size, config)
    bias = float(archive["bias"]) if "bias" in archive else 0.0
    return LinearDiscriminator(weights.ravel(), bias), config
