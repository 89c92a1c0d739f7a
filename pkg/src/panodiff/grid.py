"""Panorama latent storage plus cyclic translate / crop / concat primitives.

Memory layout is fixed: row-major, channel-interleaved.  A latent with
``height`` rows, ``width`` columns and ``channels`` channels is stored as a
C-contiguous ndarray of shape ``(height, width, channels)``, so the flat
element at ``(y*width + x)*channels + c`` is pixel ``(y, x)``, channel ``c``.
All fixtures and the raw dump format below use exactly this order.

Latents are immutable values: every operation returns a fresh object and the
backing arrays are marked read-only, so they are safe to share across
concurrent workers.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidArgument, InvalidWindow, ShapeMismatch

PLAT_MAGIC = b"PLAT v1"


def _freeze(values: np.ndarray) -> np.ndarray:
    arr = np.ascontiguousarray(values, dtype=np.float64)
    if arr.ndim != 3:
        raise InvalidArgument(f"latent values must be (height, width, channels), got ndim={arr.ndim}")
    if min(arr.shape) < 1:
        raise InvalidArgument(f"latent dimensions must all be >= 1, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise InvalidArgument("latent values must be finite")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class PanoramaLatent:
    """The wide grid being denoised; ``timestep_tag`` is bookkeeping only."""

    values: np.ndarray
    timestep_tag: int = 0

    def __post_init__(self) -> None:
        object.__setattr__(self, "values", _freeze(self.values))

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def channels(self) -> int:
        return self.values.shape[2]


@dataclass(frozen=True)
class WindowLatent:
    """A window-sized latent, same layout as :class:`PanoramaLatent`."""

    values: np.ndarray

    def __post_init__(self) -> None:
        object.__setattr__(self, "values", _freeze(self.values))

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def channels(self) -> int:
        return self.values.shape[2]


def translate(p: PanoramaLatent, s: int) -> PanoramaLatent:
    """Cyclically move content right by ``s`` columns.

    Column ``x`` of the output equals column ``(x - s) mod width`` of the
    input.  ``s`` may be any integer; it is reduced mod the width.
    """
    return PanoramaLatent(np.roll(p.values, int(s) % p.width, axis=1), p.timestep_tag)


def crop_window(p: PanoramaLatent, offset: int, window_width: int) -> WindowLatent:
    """Copy columns ``offset .. offset+window_width`` with wrap-around."""
    if window_width < 1 or window_width > p.width:
        raise InvalidWindow(
            f"window_width {window_width} invalid for panorama width {p.width}"
        )
    idx = (int(offset) + np.arange(window_width)) % p.width
    return WindowLatent(p.values[:, idx, :])


def concat_windows(ws: list[WindowLatent]) -> PanoramaLatent:
    """Abut windows left to right into one panorama."""
    if not ws:
        raise InvalidArgument("cannot concatenate zero windows")
    h, c = ws[0].height, ws[0].channels
    for w in ws[1:]:
        if w.height != h or w.channels != c:
            raise ShapeMismatch(
                f"window ({w.height}, {w.channels}) does not match ({h}, {c})"
            )
    return PanoramaLatent(np.concatenate([w.values for w in ws], axis=1))


def dump_raw(p: PanoramaLatent) -> bytes:
    """Serialize as `PLAT v1 <width> <height> <channels>\\n` + little-endian f32 payload."""
    header = b"%s %d %d %d\n" % (PLAT_MAGIC, p.width, p.height, p.channels)
    return header + p.values.astype("<f4").tobytes()


def load_raw(blob: bytes) -> PanoramaLatent:
    """Inverse of :func:`dump_raw` (values round through f32)."""
    nl = blob.find(b"\n")
    if nl < 0:
        raise InvalidArgument("missing raw latent header line")
    parts = blob[:nl].split(b" ")
    if len(parts) != 5 or b" ".join(parts[:2]) != PLAT_MAGIC:
        raise InvalidArgument(f"bad raw latent header: {blob[:nl]!r}")
    width, height, channels = (int(x) for x in parts[2:])
    payload = blob[nl + 1 :]
    expected = width * height * channels * 4
    if len(payload) != expected:
        raise InvalidArgument(
            f"raw latent payload is {len(payload)} bytes, expected {expected}"
        )
    values = np.frombuffer(payload, dtype="<f4").reshape(height, width, channels)
    return PanoramaLatent(values)


def write_raw(p: PanoramaLatent, path) -> None:
    with open(path, "wb") as fh:
        fh.write(dump_raw(p))


def read_raw(path) -> PanoramaLatent:
    with open(path, "rb") as fh:
        return load_raw(fh.read())
