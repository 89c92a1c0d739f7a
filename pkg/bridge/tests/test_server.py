"""Wire-level tests: frames are hand-packed, the server runs as a subprocess."""

import struct
import subprocess
import sys

import numpy as np
import pytest

HELLO = struct.Struct("<H4IB")
REQUEST = struct.Struct("<B3I")
RESPONSE = struct.Struct("<B3I")

W, H, C, T = 16, 2, 1, 50


def hello(kind=0, width=W, height=H, channels=C, steps=T, version=1, magic=b"SPDX"):
    return magic + HELLO.pack(version, width, height, channels, steps, kind)


def request(t, index=0, condition=0, payload=None):
    if payload is None:
        payload = np.zeros((H, W, C), dtype="<f4")
    return REQUEST.pack(1, t, index, condition) + payload.astype("<f4").tobytes()


def run_server(stdin_blob, mode="zero"):
    proc = subprocess.run(
        [sys.executable, "-m", "bridge_denoiser", "--mode", mode],
        input=stdin_blob,
        stdout=subprocess.PIPE,
        stderr=subprocess.PIPE,
        timeout=30,
    )
    return proc


def parse_responses(blob, count):
    out = []
    head_size = RESPONSE.size
    payload_size = W * H * C * 4
    for _ in range(count):
        tag, w, h, c = RESPONSE.unpack(blob[:head_size])
        assert tag == 2 and (w, h, c) == (W, H, C)
        payload = blob[head_size : head_size + payload_size]
        out.append(np.frombuffer(payload, dtype="<f4").reshape(H, W, C))
        blob = blob[head_size + payload_size :]
    assert blob == b""
    return out


def test_zero_session_ten_requests_clean_exit():
    blob = hello() + b"".join(request(1 + i % T, i) for i in range(10))
    blob += bytes([0])  # shutdown
    proc = run_server(blob)
    assert proc.returncode == 0
    responses = parse_responses(proc.stdout, 10)
    for r in responses:
        assert np.all(r == 0.0)


def test_echo_round_trip_is_byte_exact():
    rng = np.random.default_rng(0)
    payloads = [rng.standard_normal((H, W, C)).astype("<f4") for _ in range(5)]
    blob = hello() + b"".join(request(3, i, payload=p) for i, p in enumerate(payloads))
    blob += bytes([0])
    proc = run_server(blob, mode="echo")
    assert proc.returncode == 0
    for got, sent in zip(parse_responses(proc.stdout, 5), payloads):
        assert got.tobytes() == sent.tobytes()


def test_diagonal_mode_answers_finite_values():
    rng = np.random.default_rng(1)
    payload = rng.standard_normal((H, W, C)).astype("<f4")
    blob = hello() + request(25, payload=payload) + bytes([0])
    proc = run_server(blob, mode="diagonal")
    assert proc.returncode == 0
    (response,) = parse_responses(proc.stdout, 1)
    assert np.all(np.isfinite(response))
    assert not np.all(response == 0.0)


@pytest.mark.parametrize(
    "blob",
    [
        b"",  # no HELLO at all
        hello(magic=b"JUNK"),  # wrong magic
        hello(version=2),  # unsupported version
        hello(kind=7),  # unknown schedule kind
        hello() + bytes([9]),  # unknown frame tag
        hello() + request(1)[:-8],  # truncated payload
    ],
)
def test_malformed_input_exits_3(blob):
    assert run_server(blob).returncode == 3


def test_diagnostics_go_to_stderr_only():
    blob = hello() + bytes([0])
    proc = run_server(blob)
    assert proc.returncode == 0
    assert proc.stdout == b""
    assert b"session" in proc.stderr
