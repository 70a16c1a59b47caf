"""Client side of the newline-delimited JSON protocol for external models.

One request per line on the child's stdin, one reply per line on its stdout.
Every request carries a strictly increasing integer id starting at 0 for the
handshake; replies must echo it. Image payloads are base64-encoded raw
little-endian float32, row-major, channels last.
"""

from __future__ import annotations

import base64
import json
import logging
import os
import select
import shlex
import subprocess
import time

import numpy as np

from .exceptions import BackendError, ProtocolError

log = logging.getLogger(__name__)

DEFAULT_TIMEOUT = 10.0


def encode_image_payload(image: np.ndarray) -> dict:
    """Base64 payload fields for an (H, W, C) float image."""
    arr = np.ascontiguousarray(image, dtype="<f4")
    return {
        "shape": [int(d) for d in arr.shape],
        "data": base64.b64encode(arr.tobytes()).decode("ascii"),
    }


def decode_image_payload(reply: dict, context: str) -> np.ndarray:
    """Inverse of encode_image_payload, validating shape against byte count."""
    try:
        shape = tuple(int(d) for d in reply["shape"])
        raw = base64.b64decode(reply["data"], validate=True)
    except (KeyError, TypeError, ValueError) as exc:
        raise ProtocolError(f"{context}: reply lacks a valid image payload: {exc}") from exc
    expect = int(np.prod(shape)) * 4
    if len(raw) != expect:
        raise ProtocolError(f"{context}: payload holds {len(raw)} bytes, "
                            f"shape {shape} needs {expect}")
    return np.frombuffer(raw, dtype="<f4").reshape(shape).astype(np.float64)


class WireClient:
    """Spawns a child process and exchanges JSON lines with it.

    The command may be a string (shlex-split) or an argv list. The same
    timeout guards the handshake and every later reply.
    """

    def __init__(self, command, timeout: float = DEFAULT_TIMEOUT):
        if isinstance(command, str):
            command = shlex.split(command)
        self.command = list(command)
        self.timeout = float(timeout)
        self._next_id = 0
        self._buffer = bytearray()
        self._lines_read = 0
        try:
            self._proc = subprocess.Popen(
                self.command,
                stdin=subprocess.PIPE,
                stdout=subprocess.PIPE,
                stderr=None,
            )
        except OSError as exc:
            raise BackendError(f"could not spawn backend {self.command!r}: {exc}") from exc

    def close(self) -> None:
        proc = getattr(self, "_proc", None)
        if proc is None:
            return
        try:
            if proc.stdin:
                proc.stdin.close()
            proc.terminate()
            proc.wait(timeout=2.0)
        except Exception:
            try:
                proc.kill()
            except Exception:
                pass
        self._proc = None

    def __enter__(self):
        return self

    def __exit__(self, *exc_info):
        self.close()

    def __del__(self):
        try:
            self.close()
        except Exception:
            pass

    def _send_line(self, payload: dict) -> None:
        if self._proc is None or self._proc.stdin is None:
            raise BackendError("backend connection is closed")
        line = json.dumps(payload) + "\n"
        try:
            self._proc.stdin.write(line.encode("utf-8"))
            self._proc.stdin.flush()
        except (BrokenPipeError, OSError) as exc:
            raise BackendError(f"backend process is gone: {exc}") from exc

    def _read_line(self) -> str:
        """Next stdout line within the timeout, tracking line numbers."""
        deadline = time.monotonic() + self.timeout
        fd = self._proc.stdout.fileno()
        while True:
            newline = self._buffer.find(b"\n")
            if newline >= 0:
                raw = bytes(self._buffer[:newline])
                del self._buffer[:newline + 1]
                self._lines_read += 1
                return raw.decode("utf-8", errors="replace")
            remaining = deadline - time.monotonic()
            if remaining <= 0:
                raise BackendError(f"backend gave no reply within {self.timeout:.1f}s")
            ready, _, _ = select.select([fd], [], [], remaining)
            if not ready:
                raise BackendError(f"backend gave no reply within {self.timeout:.1f}s")
            chunk = os.read(fd, 65536)
            if not chunk:
                raise BackendError("backend process closed its output stream")
            self._buffer.extend(chunk)

    def _exchange(self, payload: dict) -> dict:
        request_id = self._next_id
        self._next_id += 1
        body = dict(payload)
        body["id"] = request_id
        self._send_line(body)
        line = self._read_line()
        try:
            reply = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ProtocolError(f"backend reply line {self._lines_read} is not valid "
                                f"JSON: {line[:120]!r}") from exc
        if not isinstance(reply, dict):
            raise ProtocolError(f"backend reply line {self._lines_read} is not a "
                                "JSON object")
        if "error" in reply:
            raise BackendError(f"backend error: {reply['error']}")
        return reply

    def request(self, payload: dict) -> dict:
        """Send one request; retry once if the reply id does not match."""
        expected = self._next_id
        reply = self._exchange(payload)
        if reply.get("id") == expected:
            return reply
        log.warning("backend echoed id %r, expected %d; retrying once",
                    reply.get("id"), expected)
        expected = self._next_id
        reply = self._exchange(payload)
        if reply.get("id") == expected:
            return reply
        raise ProtocolError(f"backend echoed id {reply.get('id')!r}, expected "
                            f"{expected}, after one retry")

    def hello(self) -> dict:
        return self.request({"op": "hello"})
