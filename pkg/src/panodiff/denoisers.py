"""Noise predictors: analytic Gaussian-MRF, record/replay, and external client.

The denoiser contract: ``predict_eps(window, t, condition, offset)`` returns a
noise estimate with the window's shape, deterministic in its inputs.  Outputs
are rounded through little-endian f32 at this boundary so that recorded
fixtures and the external wire protocol reproduce runs bitwise.

The analytic denoiser is the exact Bayes-optimal predictor for a stationary
correlated Gaussian prior along the panorama width.  Its mean profile is
indexed by *global* panorama coordinate while the covariance smoothing is
confined to the window, which is what makes disjoint static tilings disagree
at their borders.
"""

from __future__ import annotations

import math
import os
import select
import shlex
import subprocess
import threading
import time
from typing import Protocol

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from . import protocol
from .errors import (
    FixtureDiverged,
    FixtureExhausted,
    InvalidArgument,
    NumericalFailure,
    ProtocolError,
    ProtocolTimeout,
    ShapeMismatch,
)
from .grid import WindowLatent
from .protocol import Hello
from .schedule import NoiseSchedule

ConditionId = int


class Denoiser(Protocol):
    descriptor: str

    def predict_eps(
        self, window: WindowLatent, t: int, condition: ConditionId = 0, offset: int = 0
    ) -> WindowLatent: ...


def _as_f32(values: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(values).astype("<f4")


class GaussianMRFPrior:
    """Stationary correlated Gaussian prior along the panorama width.

    Squared-exponential covariance k(d) = sigma0^2 * exp(-d^2 / (2 ell^2));
    rows and channels are independent.  Window-restricted covariances use the
    in-window column distance; full-panorama sampling uses the cyclic distance
    (identical for contiguous windows no wider than half the panorama).
    ``correlation_length == 0`` means independent pixels.
    """

    def __init__(
        self,
        panorama_width: int,
        mean_profile: np.ndarray | None = None,
        marginal_std: float = 1.0,
        correlation_length: float = 8.0,
        jitter: float = 1e-8,
        mean_amplitude: float = 1.0,
    ):
        if panorama_width < 1:
            raise InvalidArgument("panorama_width must be >= 1")
        if marginal_std <= 0.0:
            raise InvalidArgument("marginal_std must be > 0")
        if correlation_length < 0.0:
            raise InvalidArgument("correlation_length must be >= 0")
        self.panorama_width = int(panorama_width)
        if mean_profile is None:
            x = np.arange(self.panorama_width, dtype=np.float64)
            mean_profile = mean_amplitude * np.sin(2.0 * math.pi * x / self.panorama_width)
        mean_profile = np.asarray(mean_profile, dtype=np.float64)
        if mean_profile.shape != (self.panorama_width,):
            raise InvalidArgument("mean_profile must have one entry per panorama column")
        mean_profile.setflags(write=False)
        self.mean_profile = mean_profile
        self.marginal_std = float(marginal_std)
        self.correlation_length = float(correlation_length)
        self.jitter = float(jitter)
        self._window_cov: dict[int, np.ndarray] = {}
        self._sample_chol: np.ndarray | None = None

    def _kernel(self, dist: np.ndarray) -> np.ndarray:
        s2 = self.marginal_std**2
        if self.correlation_length == 0.0:
            return s2 * (dist == 0).astype(np.float64)
        return s2 * np.exp(-(dist.astype(np.float64) ** 2) / (2.0 * self.correlation_length**2))

    def window_mean(self, offset: int, width: int) -> np.ndarray:
        cols = (int(offset) + np.arange(width)) % self.panorama_width
        return self.mean_profile[cols]

    def window_cov(self, width: int) -> np.ndarray:
        cov = self._window_cov.get(width)
        if cov is None:
            idx = np.arange(width)
            dist = np.abs(idx[:, None] - idx[None, :])
            cov = self._kernel(dist) + self.jitter * np.eye(width)
            cov.setflags(write=False)
            self._window_cov[width] = cov
        return cov

    def sample(self, height: int, channels: int, rng: np.random.Generator) -> np.ndarray:
        """Exact draw of a (height, width, channels) panorama from the prior."""
        w = self.panorama_width
        if self._sample_chol is None:
            idx = np.arange(w)
            lin = np.abs(idx[:, None] - idx[None, :])
            dist = np.minimum(lin, w - lin)
            cov = self._kernel(dist) + self.jitter * np.eye(w)
            try:
                self._sample_chol = np.linalg.cholesky(cov)
            except np.linalg.LinAlgError as exc:
                raise NumericalFailure(f"prior covariance not PD: {exc}") from exc
        z = rng.standard_normal((w, height * channels))
        fluct = self._sample_chol @ z
        out = self.mean_profile[:, None] + fluct
        return out.reshape(w, height, channels).transpose(1, 0, 2)


class AnalyticDenoiser:
    """Exact Bayes noise predictor for :class:`GaussianMRFPrior` data.

    Per-(level, window width) factorizations of a^2*Sigma + b^2*I are cached;
    caching changes no output bits because the factorization is deterministic.
    Instances are safe for concurrent predict calls once warm (the cache dict
    is only ever populated with identical values).
    """

    def __init__(self, prior: GaussianMRFPrior, schedule: NoiseSchedule):
        self.prior = prior
        self.schedule = schedule
        self._factors: dict[tuple[int, int], tuple] = {}
        params = (
            f"W'={prior.panorama_width},sigma0={prior.marginal_std},"
            f"ell={prior.correlation_length},T={schedule.steps},kind={schedule.kind}"
        )
        self.descriptor = f"mrf({params})#{protocol.digest8(params.encode()).hex()}"

    def _factor(self, t: int, width: int):
        key = (t, width)
        fac = self._factors.get(key)
        if fac is None:
            ab = self.schedule.alpha_bar_at(t)
            m = ab * self.prior.window_cov(width) + (1.0 - ab) * np.eye(width)
            try:
                fac = cho_factor(m, lower=True)
            except np.linalg.LinAlgError as exc:
                raise NumericalFailure(f"posterior solve failed at t={t}: {exc}") from exc
            self._factors[key] = fac
        return fac

    def eps_float64(self, values: np.ndarray, offset: int, t: int) -> np.ndarray:
        """Posterior-mean noise estimate in float64, before the f32 rounding."""
        height, width, channels = values.shape
        ab = self.schedule.alpha_bar_at(t)
        a = math.sqrt(ab)
        b = math.sqrt(1.0 - ab)
        mu = self.prior.window_mean(offset, width)
        x = values.transpose(1, 0, 2).reshape(width, height * channels)
        centered = x - a * mu[:, None]
        sol = cho_solve(self._factor(t, width), centered)
        ex0 = mu[:, None] + a * (self.prior.window_cov(width) @ sol)
        eps = (x - a * ex0) / b
        return eps.reshape(width, height, channels).transpose(1, 0, 2)

    def predict_eps(
        self, window: WindowLatent, t: int, condition: ConditionId = 0, offset: int = 0
    ) -> WindowLatent:
        eps = self.eps_float64(window.values, offset, t)
        return WindowLatent(_as_f32(eps))


class RecordingDenoiser:
    """Wraps a denoiser and logs (t, call index, input digest, output) records."""

    def __init__(self, inner, hello: Hello):
        self.inner = inner
        self.hello = hello
        self.descriptor = f"record({inner.descriptor})"
        self._records: list[bytes] = []
        self._counts: dict[int, int] = {}
        self._lock = threading.Lock()

    def predict_eps(
        self, window: WindowLatent, t: int, condition: ConditionId = 0, offset: int = 0
    ) -> WindowLatent:
        out = self.inner.predict_eps(window, t, condition, offset)
        with self._lock:
            call_index = self._counts.get(t, 0)
            self._counts[t] = call_index + 1
            self._records.append(
                protocol.pack_fixture_record(
                    t,
                    call_index,
                    protocol.digest8(protocol.payload_to_bytes(window.values)),
                    protocol.payload_to_bytes(out.values),
                )
            )
        return out

    def save(self, path) -> None:
        with open(path, "wb") as fh:
            fh.write(protocol.pack_hello(self.hello))
            for rec in self._records:
                fh.write(rec)


class ReplayDenoiser:
    """Replays a recorded fixture bitwise, cross-checking input digests."""

    def __init__(self, path):
        with open(path, "rb") as fh:
            blob = fh.read()
        self.hello = protocol.unpack_hello(blob[: protocol.HELLO_SIZE])
        payload_bytes = self.hello.payload_floats * 4
        self._entries: dict[tuple[int, int], tuple[bytes, bytes]] = {}
        for t, call_index, dig, payload in protocol.iter_fixture_records(
            blob[protocol.HELLO_SIZE :], payload_bytes
        ):
            self._entries[(t, call_index)] = (dig, payload)
        self._counts: dict[int, int] = {}
        self._lock = threading.Lock()
        self.descriptor = f"replay({os.fspath(path)})"

    def predict_eps(
        self, window: WindowLatent, t: int, condition: ConditionId = 0, offset: int = 0
    ) -> WindowLatent:
        with self._lock:
            call_index = self._counts.get(t, 0)
            self._counts[t] = call_index + 1
        entry = self._entries.get((t, call_index))
        if entry is None:
            raise FixtureExhausted(f"no fixture entry for t={t}, call {call_index}")
        dig, payload = entry
        seen = protocol.digest8(protocol.payload_to_bytes(window.values))
        if seen != dig:
            raise FixtureDiverged(
                f"input digest mismatch at t={t}, call {call_index}: "
                f"{seen.hex()} != {dig.hex()}"
            )
        values = protocol.payload_from_bytes(
            payload, self.hello.height, self.hello.width, self.hello.channels
        )
        return WindowLatent(values)


class ExternalDenoiser:
    """Client for external denoiser protocol v1 over a child's stdin/stdout.

    Requests are serialized over the single connection; ``offset`` is accepted
    for interface parity but never transmitted (real backends condition on
    ``condition``, not on panorama position).
    """

    def __init__(
        self,
        command: str | list[str],
        width: int,
        height: int,
        channels: int,
        steps: int,
        schedule_kind: str = "linear",
        timeout: float = 30.0,
    ):
        argv = shlex.split(command) if isinstance(command, str) else list(command)
        self.hello = Hello(width, height, channels, steps, schedule_kind)
        self.timeout = float(timeout)
        self.descriptor = f"external({' '.join(argv)})"
        self._lock = threading.Lock()
        self._counts: dict[int, int] = {}
        self._proc = subprocess.Popen(
            argv, stdin=subprocess.PIPE, stdout=subprocess.PIPE
        )
        os.set_blocking(self._proc.stdout.fileno(), False)
        self._send(protocol.pack_hello(self.hello))

    def _send(self, blob: bytes, context: str = "HELLO") -> None:
        try:
            self._proc.stdin.write(blob)
            self._proc.stdin.flush()
        except (BrokenPipeError, OSError) as exc:
            raise ProtocolError(f"server pipe broken while sending {context}: {exc}") from exc

    def _read_exact(self, n: int, context: str) -> bytes:
        fd = self._proc.stdout.fileno()
        buf = bytearray()
        deadline = time.monotonic() + self.timeout
        while len(buf) < n:
            remaining = deadline - time.monotonic()
            if remaining <= 0:
                raise ProtocolTimeout(f"timed out reading response ({context})")
            ready, _, _ = select.select([fd], [], [], remaining)
            if not ready:
                continue
            chunk = os.read(fd, n - len(buf))
            if not chunk:
                raise ProtocolError(f"server closed the pipe ({context})")
            buf += chunk
        return bytes(buf)

    def predict_eps(
        self, window: WindowLatent, t: int, condition: ConditionId = 0, offset: int = 0
    ) -> WindowLatent:
        h = self.hello
        if (window.height, window.width, window.channels) != (h.height, h.width, h.channels):
            raise ShapeMismatch(
                f"window shape {window.values.shape} does not match negotiated "
                f"({h.height}, {h.width}, {h.channels})"
            )
        context = f"t={t}"
        with self._lock:
            window_index = self._counts.get(t, 0)
            self._counts[t] = window_index + 1
            self._send(
                protocol.pack_request(
                    t, window_index, condition, protocol.payload_to_bytes(window.values)
                ),
                context,
            )
            head = self._read_exact(protocol.RESPONSE_HEAD_SIZE, context)
            tag, w, hh, c = protocol.unpack_response_head(head)
            if tag != protocol.TAG_RESPONSE:
                raise ProtocolError(f"unexpected response tag {tag} ({context})")
            if (w, hh, c) != (h.width, h.height, h.channels):
                raise ShapeMismatch(f"server echoed dims ({w}, {hh}, {c}) ({context})")
            payload = self._read_exact(h.payload_floats * 4, context)
        return WindowLatent(protocol.payload_from_bytes(payload, hh, w, c))

    def close(self) -> None:
        if self._proc.poll() is None:
            try:
                self._proc.stdin.write(protocol.pack_shutdown())
                self._proc.stdin.flush()
                self._proc.stdin.close()
            except (BrokenPipeError, OSError):
                pass
            try:
                self._proc.wait(timeout=5.0)
            except subprocess.TimeoutExpired:
                self._proc.kill()
                self._proc.wait()
        if self._proc.stdout is not None:
            self._proc.stdout.close()

    def __enter__(self) -> "ExternalDenoiser":
        return self

    def __exit__(self, *exc) -> None:
        self.close()
