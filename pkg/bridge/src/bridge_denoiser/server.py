"""Single-threaded stdio server for the external denoiser protocol (v1).

Wire format, little-endian throughout:

* HELLO: magic ``SPDX``, version u16 = 1, W:u32, H:u32, C:u32, T:u32,
  schedule kind u8 (0 = linear, 1 = cosine).
* Request: tag u8 = 1, t:u32, window_index:u32, condition:u32, then
  W*H*C f32 payload (row-major, channel-interleaved).
* Response: tag u8 = 2, W:u32, H:u32, C:u32, then payload.
* Shutdown: tag u8 = 0.

stdout is protocol-pure: all diagnostics go to stderr.  A malformed frame
terminates the process with exit code 3.
"""

from __future__ import annotations

import struct
import sys
from dataclasses import dataclass

import numpy as np

MAGIC = b"SPDX"
VERSION = 1
TAG_SHUTDOWN = 0
TAG_REQUEST = 1
TAG_RESPONSE = 2
SCHEDULE_KIND_NAMES = {0: "linear", 1: "cosine"}

_HELLO = struct.Struct("<H4IB")
_REQUEST_BODY = struct.Struct("<3I")
_RESPONSE = struct.Struct("<B3I")

EXIT_MALFORMED = 3


class MalformedFrame(Exception):
    pass


@dataclass
class ProtocolSession:
    """Dims negotiated by HELLO; requests are answered strictly in order."""

    width: int
    height: int
    channels: int
    steps: int
    schedule_kind: str
    requests: int = 0

    @property
    def payload_bytes(self) -> int:
        return self.width * self.height * self.channels * 4


def _read_exact(stream, n: int, context: str) -> bytes:
    buf = stream.read(n)
    if buf is None or len(buf) != n:
        raise MalformedFrame(f"short read while expecting {n} bytes ({context})")
    return buf


def read_hello(stream) -> ProtocolSession:
    magic = _read_exact(stream, len(MAGIC), "HELLO magic")
    if magic != MAGIC:
        raise MalformedFrame(f"bad magic {magic!r}")
    version, w, h, c, t, kind = _HELLO.unpack(_read_exact(stream, _HELLO.size, "HELLO"))
    if version != VERSION:
        raise MalformedFrame(f"unsupported version {version}")
    if kind not in SCHEDULE_KIND_NAMES:
        raise MalformedFrame(f"unknown schedule kind code {kind}")
    if min(w, h, c, t) < 1:
        raise MalformedFrame(f"bad dims {(w, h, c, t)}")
    return ProtocolSession(w, h, c, t, SCHEDULE_KIND_NAMES[kind])


def serve(denoise_fn, stdin=None, stdout=None) -> int:
    """Answer requests until Shutdown; returns the process exit code.

    ``denoise_fn(session, t, window_index, condition, values)`` receives the
    payload as a float32 (H, W, C) array and must return an array of the same
    shape.
    """
    stdin = stdin or sys.stdin.buffer
    stdout = stdout or sys.stdout.buffer
    try:
        session = read_hello(stdin)
        print(
            f"bridge-denoiser: session W={session.width} H={session.height} "
            f"C={session.channels} T={session.steps} schedule={session.schedule_kind}",
            file=sys.stderr,
        )
        while True:
            tag_byte = stdin.read(1)
            if tag_byte is None or len(tag_byte) != 1:
                raise MalformedFrame("EOF while expecting a frame tag")
            tag = tag_byte[0]
            if tag == TAG_SHUTDOWN:
                return 0
            if tag != TAG_REQUEST:
                raise MalformedFrame(f"unknown frame tag {tag}")
            t, window_index, condition = _REQUEST_BODY.unpack(
                _read_exact(stdin, _REQUEST_BODY.size, "request head")
            )
            payload = _read_exact(stdin, session.payload_bytes, f"request t={t}")
            values = np.frombuffer(payload, dtype="<f4").reshape(
                session.height, session.width, session.channels
            )
            out = np.ascontiguousarray(
                denoise_fn(session, t, window_index, condition, values)
            ).astype("<f4")
            if out.shape != values.shape:
                raise MalformedFrame(
                    f"denoise_fn returned shape {out.shape}, expected {values.shape}"
                )
            stdout.write(
                _RESPONSE.pack(TAG_RESPONSE, session.width, session.height, session.channels)
            )
            stdout.write(out.tobytes())
            stdout.flush()
            session.requests += 1
    except MalformedFrame as exc:
        print(f"bridge-denoiser: malformed frame: {exc}", file=sys.stderr)
        return EXIT_MALFORMED
    except BrokenPipeError:
        print("bridge-denoiser: client closed the pipe", file=sys.stderr)
        return EXIT_MALFORMED
