"""End-to-end tests against a real adapter subprocess.

Every conversation here goes through the actual pipes: spawn the module,
write JSON lines, read JSON lines. Expected values are recomputed in the
test from the same float32 payload the adapter sees.
"""

import base64
import json
import os
import select
import subprocess
import sys
import time

import numpy as np
import pytest

from model_adapter import AdapterConfig, AdapterError


def payload(values, shape):
    arr = np.ascontiguousarray(values, dtype="<f4").reshape(shape)
    return {"shape": list(shape),
            "data": base64.b64encode(arr.tobytes()).decode("ascii")}


def quantized(values, shape):
    """The float64 image the adapter reconstructs from a payload."""
    return (np.ascontiguousarray(values, dtype="<f4")
            .reshape(shape).astype(np.float64))


class Session:
    """One adapter process plus a line-oriented JSON conversation."""

    def __init__(self, *args):
        self.proc = subprocess.Popen(
            [sys.executable, "-m", "model_adapter", *args],
            stdin=subprocess.PIPE, stdout=subprocess.PIPE,
            stderr=subprocess.PIPE)
        self.buffer = bytearray()
        self.next_id = 0

    def send_raw(self, text: str) -> None:
        self.proc.stdin.write(text.encode("utf-8"))
        self.proc.stdin.flush()

    def read_reply(self, timeout: float = 10.0) -> dict:
        deadline = time.monotonic() + timeout
        fd = self.proc.stdout.fileno()
        while True:
            newline = self.buffer.find(b"\n")
            if newline >= 0:
                line = bytes(self.buffer[:newline])
                del self.buffer[:newline + 1]
                return json.loads(line)
            remaining = deadline - time.monotonic()
            assert remaining > 0, "adapter sent no reply in time"
            ready, _, _ = select.select([fd], [], [], remaining)
            assert ready, "adapter sent no reply in time"
            chunk = os.read(fd, 65536)
            assert chunk, "adapter closed its stdout"
            self.buffer.extend(chunk)

    def request(self, op: str, **fields) -> dict:
        rid = self.next_id
        self.next_id += 1
        self.send_raw(json.dumps({"id": rid, "op": op, **fields}) + "\n")
        reply = self.read_reply()
        assert reply["id"] == rid
        return reply

    def __enter__(self):
        return self

    def __exit__(self, *exc_info):
        self.proc.kill()
        self.proc.wait()


def run_adapter(*args, lines=""):
    return subprocess.run([sys.executable, "-m", "model_adapter", *args],
                          input=lines, capture_output=True, text=True,
                          timeout=30)


def test_echo_classifier_handshake_and_scores():
    rng = np.random.default_rng(0)
    img = rng.uniform(size=(6, 5, 3))
    with Session("--role", "classifier", "--model", "echo",
                 "--height", "6", "--width", "5") as s:
        hello = s.request("hello")
        assert hello["class_count"] == 3
        assert (hello["height"], hello["width"]) == (6, 5)
        reply = s.request("score", **payload(img, (6, 5, 3)))
        expected = quantized(img, (6, 5, 3)).reshape(-1, 3).mean(axis=0)
        np.testing.assert_allclose(reply["scores"], expected, atol=1e-9)


def test_wrong_image_shape_names_the_expected_dims():
    rng = np.random.default_rng(1)
    with Session("--role", "classifier", "--model", "echo",
                 "--height", "6", "--width", "5") as s:
        s.request("hello")
        reply = s.request("score", **payload(rng.uniform(size=(4, 4, 3)),
                                             (4, 4, 3)))
        assert "6x5x3" in reply["error"]
        assert "4x4x3" in reply["error"]
        # the process must shrug it off and keep serving
        good = s.request("score", **payload(rng.uniform(size=(6, 5, 3)),
                                            (6, 5, 3)))
        assert "scores" in good
        assert s.proc.poll() is None


def test_malformed_lines_get_error_replies():
    with Session("--role", "classifier", "--model", "echo",
                 "--height", "4", "--width", "4") as s:
        for junk in ("this is not json\n", "[1, 2, 3]\n", "\"just a string\"\n"):
            s.send_raw(junk)
            reply = s.read_reply()
            assert "error" in reply
        s.send_raw("\n\n")  # blank lines are ignored, not answered
        hello = s.request("hello")
        assert hello["class_count"] == 3
        assert s.proc.poll() is None


def test_unknown_and_misrouted_ops():
    with Session("--role", "classifier", "--model", "echo",
                 "--height", "4", "--width", "4") as s:
        reply = s.request("meditate")
        assert "meditate" in reply["error"]
        reply = s.request("generate", z=[0.0])
        assert "classifier" in reply["error"]


def test_bad_payloads_are_named():
    with Session("--role", "classifier", "--model", "echo",
                 "--height", "4", "--width", "4") as s:
        reply = s.request("score", shape=[4, 4, 3], data="!!!")
        assert "base64" in reply["error"]
        reply = s.request("score", shape=[4, 4, 3],
                          data=base64.b64encode(b"\0" * 8).decode("ascii"))
        assert "bytes" in reply["error"]
        reply = s.request("score")
        assert "payload" in reply["error"]


def test_npz_classifier_matches_direct_invocation(tmp_path):
    rng = np.random.default_rng(7)
    weights = rng.standard_normal((4 * 4 * 3, 5))
    bias = rng.standard_normal(5)
    path = tmp_path / "cls.npz"
    np.savez(path, weights=weights, bias=bias)
    img = rng.uniform(size=(4, 4, 3))
    with Session("--role", "classifier", "--model", str(path),
                 "--height", "4", "--width", "4") as s:
        hello = s.request("hello")
        assert hello["class_count"] == 5
        reply = s.request("score", **payload(img, (4, 4, 3)))
    logits = quantized(img, (4, 4, 3)).ravel() @ weights + bias
    shifted = np.exp(logits - logits.max())
    np.testing.assert_allclose(reply["scores"], shifted / shifted.sum(),
                               atol=1e-9)


def test_preprocessing_applies_before_the_model():
    rng = np.random.default_rng(3)
    img = rng.uniform(size=(4, 4, 3))
    with Session("--role", "classifier", "--model", "echo",
                 "--height", "4", "--width", "4",
                 "--scale", "2", "--mean", "0.5", "--std", "2,4,8") as s:
        s.request("hello")
        reply = s.request("score", **payload(img, (4, 4, 3)))
    x = (quantized(img, (4, 4, 3)) * 2.0 - 0.5) / np.array([2.0, 4.0, 8.0])
    np.testing.assert_allclose(reply["scores"], x.reshape(-1, 3).mean(axis=0),
                               atol=1e-9)


def test_echo_generator_round_trip():
    z = [float(v) for v in range(5)]
    with Session("--role", "generator", "--model", "echo",
                 "--height", "3", "--width", "4", "--latent-dim", "5") as s:
        hello = s.request("hello")
        assert hello["latent_dim"] == 5
        assert (hello["height"], hello["width"]) == (3, 4)
        reply = s.request("generate", z=z)
        raw = base64.b64decode(reply["data"])
        image = np.frombuffer(raw, dtype="<f4").reshape(reply["shape"])
        expected = np.resize(np.asarray(z), 3 * 4 * 3).reshape(3, 4, 3)
        np.testing.assert_allclose(image, expected, atol=1e-6)
        disc = s.request("discriminate", **payload(image, (3, 4, 3)))
        np.testing.assert_allclose(disc["score"],
                                   quantized(image, (3, 4, 3)).mean(),
                                   atol=1e-9)


def test_npz_generator_and_discriminator(tmp_path):
    rng = np.random.default_rng(11)
    matrix = rng.standard_normal((2 * 3 * 3, 4))
    offset = rng.standard_normal(2 * 3 * 3)
    disc_weights = rng.standard_normal(2 * 3 * 3)
    path = tmp_path / "gen.npz"
    np.savez(path, matrix=matrix, offset=offset,
             disc_weights=disc_weights, disc_bias=0.25)
    z = rng.standard_normal(4)
    with Session("--role", "generator", "--model", str(path),
                 "--height", "2", "--width", "3") as s:
        hello = s.request("hello")
        assert hello["latent_dim"] == 4
        reply = s.request("generate", z=[float(v) for v in z])
        raw = np.frombuffer(base64.b64decode(reply["data"]), dtype="<f4")
        expected = (matrix @ z + offset).astype("<f4")
        np.testing.assert_allclose(raw, expected, atol=1e-6)

        img = rng.uniform(size=(2, 3, 3))
        disc = s.request("discriminate", **payload(img, (2, 3, 3)))
        t = quantized(img, (2, 3, 3)).ravel() @ disc_weights + 0.25
        np.testing.assert_allclose(disc["score"], 1.0 / (1.0 + np.exp(-t)),
                                   atol=1e-9)

        short = s.request("generate", z=[1.0, 2.0])
        assert "4" in short["error"]


def test_npz_discriminator_role(tmp_path):
    rng = np.random.default_rng(13)
    weights = rng.standard_normal(4 * 4 * 3)
    path = tmp_path / "disc.npz"
    np.savez(path, weights=weights, bias=-0.5)
    img = rng.uniform(size=(4, 4, 3))
    with Session("--role", "discriminator", "--model", str(path),
                 "--height", "4", "--width", "4") as s:
        hello = s.request("hello")
        assert (hello["height"], hello["width"]) == (4, 4)
        reply = s.request("discriminate", **payload(img, (4, 4, 3)))
        t = quantized(img, (4, 4, 3)).ravel() @ weights - 0.5
        np.testing.assert_allclose(reply["score"], 1.0 / (1.0 + np.exp(-t)),
                                   atol=1e-9)
        misrouted = s.request("score", **payload(img, (4, 4, 3)))
        assert "discriminator" in misrouted["error"]


def test_model_load_failures_exit_before_the_handshake(tmp_path):
    result = run_adapter("--role", "classifier", "--model",
                         str(tmp_path / "missing.npz"),
                         "--height", "4", "--width", "4")
    assert result.returncode == 1
    assert result.stdout == ""
    assert "adapter:" in result.stderr

    path = tmp_path / "cls.npz"
    np.savez(path, weights=np.zeros((4 * 4 * 3, 2)))
    result = run_adapter("--role", "classifier", "--model", str(path),
                         "--height", "4", "--width", "4", "--classes", "7")
    assert result.returncode == 1
    assert result.stdout == ""
    assert "7" in result.stderr

    # dims that do not match the weights die just as early
    result = run_adapter("--role", "classifier", "--model", str(path),
                         "--height", "8", "--width", "8")
    assert result.returncode == 1
    assert "8x8x3" in result.stderr

    np.savez(tmp_path / "empty.npz", other=np.zeros(3))
    result = run_adapter("--role", "classifier",
                         "--model", str(tmp_path / "empty.npz"),
                         "--height", "4", "--width", "4")
    assert result.returncode == 1
    assert "weights" in result.stderr


def test_eof_is_a_clean_exit():
    result = run_adapter("--role", "classifier", "--model", "echo",
                         "--height", "4", "--width", "4", lines="")
    assert result.returncode == 0
    assert result.stdout == ""


def test_config_rejects_nonsense():
    with pytest.raises(AdapterError, match="role"):
        AdapterConfig(role="oracle", model="echo", height=4, width=4)
    with pytest.raises(AdapterError, match="positive"):
        AdapterConfig(role="classifier", model="echo", height=0, width=4)
    with pytest.raises(AdapterError, match="nonzero"):
        AdapterConfig(role="classifier", model="echo", height=4, width=4,
                      std=(1.0, 0.0, 1.0))
    with pytest.raises(AdapterError, match="finite"):
        AdapterConfig(role="classifier", model="echo", height=4, width=4,
                      mean=(float("nan"), 0.0, 0.0))


def test_cli_reports_config_errors(capsys):
    from model_adapter.cli import main
    code = main(["--role", "classifier", "--model", "echo",
                 "--height", "0", "--width", "4"])
    assert code == 1
    assert "adapter:" in capsys.readouterr().err
