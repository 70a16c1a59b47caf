"""Bridge saved models onto the engine's stdio wire protocol.

The engine talks to external models through newline-delimited JSON with
base64 float32 image payloads. This package wraps a model file (or the
builtin echo test models) behind that protocol so the engine can explain
it without importing any ML framework itself. One process serves one model
in one role: classifier, generator, or discriminator.
"""

from .models import AdapterError, load_model
from .serve import AdapterConfig, serve

__version__ = "0.1.0"

__all__ = ["AdapterConfig", "AdapterError", "load_model", "serve",
           "__version__"]
