"""Reference denoise functions served over the protocol.

``diagonal`` is the conformance target: the closed-form posterior-mean noise
estimate for independent zero-mean Gaussian pixels with marginal variance
sigma0^2.  It reconstructs the engine's noise schedule from the HELLO header:

* linear: beta = linspace(0.1/T, 20/T, T)
* cosine: alpha_bar(t) = f(t)/f(0), f(t) = cos^2((t/T + s)/(1 + s) * pi/2),
  s = 0.008, beta clipped to [1e-8, 0.999]

with alpha_bar(t) the cumulative product of the first t alphas and
alpha_bar(0) = 1.
"""

from __future__ import annotations

import math

import numpy as np


def alpha_bar_table(steps: int, kind: str) -> np.ndarray:
    """alpha_bar at levels 0..steps (index 0 is exactly 1)."""
    if kind == "linear":
        beta = np.linspace(0.1 / steps, 20.0 / steps, steps)
    else:
        levels = np.arange(steps + 1, dtype=np.float64)
        f = np.cos((levels / steps + 0.008) / 1.008 * math.pi / 2.0) ** 2
        abar = f / f[0]
        beta = np.clip(1.0 - abar[1:] / abar[:-1], 1e-8, 0.999)
    return np.concatenate([[1.0], np.cumprod(1.0 - beta)])


def zero(session, t, window_index, condition, values):
    return np.zeros_like(values)


def echo(session, t, window_index, condition, values):
    return values


class DiagonalDenoiser:
    """Posterior-mean noise for N(0, sigma0^2 I) pixels at noise level t."""

    def __init__(self, sigma0: float = 1.0):
        self.sigma0 = float(sigma0)
        self._abar: np.ndarray | None = None

    def __call__(self, session, t, window_index, condition, values):
        if self._abar is None:
            self._abar = alpha_bar_table(session.steps, session.schedule_kind)
        if not 1 <= t <= session.steps:
            raise ValueError(f"noise level {t} outside [1, {session.steps}]")
        ab = float(self._abar[t])
        a = math.sqrt(ab)
        b = math.sqrt(1.0 - ab)
        x = values.astype(np.float64)
        s2 = self.sigma0**2
        ex0 = s2 * a * x / (ab * s2 + 1.0 - ab)
        return (x - a * ex0) / b


MODES = {"zero": lambda args: zero, "echo": lambda args: echo,
         "diagonal": lambda args: DiagonalDenoiser(args.sigma0)}
