"""Binary framing for the external denoiser protocol (v1) and replay fixtures.

All integers are little-endian.  Frames, in order on the wire:

* HELLO: magic ``SPDX``, version u16 = 1, then W:u32, H:u32, C:u32, T:u32,
  schedule kind u8 (0 = linear, 1 = cosine).
* Request: tag u8 = 1, t:u32, window_index:u32, condition:u32, then
  W*H*C f32 payload in the documented row-major channel-interleaved layout.
* Response: tag u8 = 2, W:u32, H:u32, C:u32 (dims echoed), then payload.
* Shutdown: tag u8 = 0.  Any other tag is a protocol error.

Replay fixture files are the HELLO header followed by records of
(t:u32, call_index:u32, input_digest: 8 bytes, payload f32 array).
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass

import numpy as np

from .errors import ProtocolError

MAGIC = b"SPDX"
VERSION = 1

TAG_SHUTDOWN = 0
TAG_REQUEST = 1
TAG_RESPONSE = 2

SCHEDULE_KIND_CODES = {"linear": 0, "cosine": 1}
SCHEDULE_KIND_NAMES = {v: k for k, v in SCHEDULE_KIND_CODES.items()}

_HELLO = struct.Struct("<H4IB")
_REQUEST = struct.Struct("<B3I")
_RESPONSE = struct.Struct("<B3I")

HELLO_SIZE = len(MAGIC) + _HELLO.size
REQUEST_HEAD_SIZE = _REQUEST.size
RESPONSE_HEAD_SIZE = _RESPONSE.size
DIGEST_SIZE = 8


@dataclass(frozen=True)
class Hello:
    width: int
    height: int
    channels: int
    steps: int
    schedule_kind: str

    @property
    def payload_floats(self) -> int:
        return self.width * self.height * self.channels


def digest8(data: bytes) -> bytes:
    """8-byte content checksum used for replay cross-checking."""
    return hashlib.blake2b(data, digest_size=DIGEST_SIZE).digest()


def pack_hello(h: Hello) -> bytes:
    code = SCHEDULE_KIND_CODES[h.schedule_kind]
    return MAGIC + _HELLO.pack(VERSION, h.width, h.height, h.channels, h.steps, code)


def unpack_hello(blob: bytes) -> Hello:
    if len(blob) != HELLO_SIZE or blob[: len(MAGIC)] != MAGIC:
        raise ProtocolError(f"bad HELLO frame: {blob[:16]!r}")
    version, w, h, c, t, code = _HELLO.unpack(blob[len(MAGIC) :])
    if version != VERSION:
        raise ProtocolError(f"unsupported protocol version {version}")
    if code not in SCHEDULE_KIND_NAMES:
        raise ProtocolError(f"unknown schedule kind code {code}")
    return Hello(w, h, c, t, SCHEDULE_KIND_NAMES[code])


def payload_to_bytes(values: np.ndarray) -> bytes:
    """Window values in the documented layout as little-endian f32."""
    return np.ascontiguousarray(values).astype("<f4").tobytes()


def payload_from_bytes(blob: bytes, height: int, width: int, channels: int) -> np.ndarray:
    expected = height * width * channels * 4
    if len(blob) != expected:
        raise ProtocolError(f"payload is {len(blob)} bytes, expected {expected}")
    return np.frombuffer(blob, dtype="<f4").reshape(height, width, channels)


def pack_request(t: int, window_index: int, condition: int, payload: bytes) -> bytes:
    return _REQUEST.pack(TAG_REQUEST, t, window_index, condition) + payload


def unpack_request_head(blob: bytes) -> tuple[int, int, int, int]:
    """Returns (tag, t, window_index, condition)."""
    return _REQUEST.unpack(blob)


def pack_response(width: int, height: int, channels: int, payload: bytes) -> bytes:
    return _RESPONSE.pack(TAG_RESPONSE, width, height, channels) + payload


def unpack_response_head(blob: bytes) -> tuple[int, int, int, int]:
    """Returns (tag, width, height, channels)."""
    return _RESPONSE.unpack(blob)


def pack_shutdown() -> bytes:
    return bytes([TAG_SHUTDOWN])


_RECORD_HEAD = struct.Struct("<2I")


def pack_fixture_record(t: int, call_index: int, input_digest: bytes, payload: bytes) -> bytes:
    if len(input_digest) != DIGEST_SIZE:
        raise ProtocolError("input digest must be 8 bytes")
    return _RECORD_HEAD.pack(t, call_index) + input_digest + payload


def iter_fixture_records(blob: bytes, payload_bytes: int):
    """Yield (t, call_index, digest, payload) tuples from a fixture body."""
    record = _RECORD_HEAD.size + DIGEST_SIZE + payload_bytes
    if len(blob) % record != 0:
        raise ProtocolError(
            f"fixture body of {len(blob)} bytes is not a multiple of record size {record}"
        )
    for start in range(0, len(blob), record):
        t, call_index = _RECORD_HEAD.unpack_from(blob, start)
        dig = blob[start + _RECORD_HEAD.size : start + _RECORD_HEAD.size + DIGEST_SIZE]
        payload = blob[start + _RECORD_HEAD.size + DIGEST_SIZE : start + record]
        yield t, call_index, dig, payload
