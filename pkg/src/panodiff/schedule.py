"""Noise schedules and single reverse-step math.

Timesteps are noise *levels* ``t in {0, ..., T}``: level 0 is clean data,
level T is (nearly) pure noise.  ``beta[i]`` is the variance added going from
level ``i`` to level ``i+1``, so ``alpha_bar_at(t)`` is the cumulative product
of the first ``t`` alphas, with ``alpha_bar_at(0) == 1`` exactly.  A full
reverse chain therefore makes exactly T denoiser calls, one per level
``t = T, T-1, ..., 1``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import InvalidArgument, ShapeMismatch
from .grid import WindowLatent

SCHEDULE_KINDS = ("linear", "cosine")
STEP_KINDS = ("ddpm", "ddim")


@dataclass(frozen=True)
class NoiseSchedule:
    """Per-level beta / alpha / alpha_bar tables."""

    steps: int
    beta: np.ndarray
    alpha: np.ndarray
    alpha_bar: np.ndarray
    kind: str

    def __post_init__(self) -> None:
        beta = np.asarray(self.beta, dtype=np.float64)
        if beta.shape != (self.steps,) or self.steps < 1:
            raise InvalidArgument("beta must have one entry per step")
        if np.any(beta <= 0.0) or np.any(beta >= 1.0):
            raise InvalidArgument("all beta values must lie in (0, 1)")
        if self.kind not in SCHEDULE_KINDS:
            raise InvalidArgument(f"unknown schedule kind {self.kind!r}")
        alpha = 1.0 - beta
        alpha_bar = np.cumprod(alpha)
        if np.any(np.diff(alpha_bar) >= 0.0):
            raise InvalidArgument("alpha_bar must be strictly decreasing")
        for name, arr in (("beta", beta), ("alpha", alpha), ("alpha_bar", alpha_bar)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @classmethod
    def from_beta(cls, beta: np.ndarray, kind: str = "linear") -> "NoiseSchedule":
        beta = np.asarray(beta, dtype=np.float64)
        return cls(steps=len(beta), beta=beta, alpha=None, alpha_bar=None, kind=kind)

    @classmethod
    def linear(cls, steps: int = 50) -> "NoiseSchedule":
        # Classic 1000-step linear range 1e-4..0.02, rescaled so total noise
        # injected is independent of the step count.
        beta = np.linspace(0.1 / steps, 20.0 / steps, steps)
        return cls.from_beta(beta, kind="linear")

    @classmethod
    def cosine(cls, steps: int = 50, s: float = 0.008) -> "NoiseSchedule":
        levels = np.arange(steps + 1, dtype=np.float64)
        f = np.cos((levels / steps + s) / (1.0 + s) * math.pi / 2.0) ** 2
        abar = f / f[0]
        beta = np.clip(1.0 - abar[1:] / abar[:-1], 1e-8, 0.999)
        return cls.from_beta(beta, kind="cosine")

    def alpha_bar_at(self, t: int) -> float:
        """Cumulative signal retention at level ``t`` (1.0 at t=0)."""
        if t < 0 or t > self.steps:
            raise InvalidArgument(f"level {t} outside [0, {self.steps}]")
        return 1.0 if t == 0 else float(self.alpha_bar[t - 1])


@dataclass(frozen=True)
class StepRule:
    """Reverse update rule: ancestral DDPM or (eta-parameterized) DDIM."""

    kind: str = "ddim"
    eta: float = 0.0

    def __post_init__(self) -> None:
        if self.kind not in STEP_KINDS:
            raise InvalidArgument(f"unknown step rule {self.kind!r}")
        if not 0.0 <= self.eta <= 1.0:
            raise InvalidArgument("eta must lie in [0, 1]")

    @property
    def stochastic(self) -> bool:
        return self.kind == "ddpm" or self.eta > 0.0


def _check_shapes(*arrays: np.ndarray) -> None:
    shape = arrays[0].shape
    for a in arrays[1:]:
        if a.shape != shape:
            raise ShapeMismatch(f"shape {a.shape} does not match {shape}")


def forward_values(
    schedule: NoiseSchedule, x0: np.ndarray, t: int, noise: np.ndarray
) -> np.ndarray:
    _check_shapes(x0, noise)
    ab = schedule.alpha_bar_at(t)
    return math.sqrt(ab) * x0 + math.sqrt(1.0 - ab) * noise


def forward_sample(
    schedule: NoiseSchedule, x0: WindowLatent, t: int, noise: WindowLatent
) -> WindowLatent:
    """Noise clean data up to level ``t``: sqrt(abar)*x0 + sqrt(1-abar)*noise."""
    return WindowLatent(forward_values(schedule, x0.values, t, noise.values))


def reverse_values(
    schedule: NoiseSchedule,
    xt: np.ndarray,
    eps_hat: np.ndarray,
    t: int,
    rule: StepRule,
    rng_noise: np.ndarray | None = None,
) -> np.ndarray:
    """One reverse step from level ``t`` to ``t-1`` on raw arrays.

    ``rng_noise`` is only read on stochastic rules when ``t-1 > 0``.
    """
    if t < 1 or t > schedule.steps:
        raise InvalidArgument(f"reverse step level {t} outside [1, {schedule.steps}]")
    _check_shapes(xt, eps_hat)
    ab_t = schedule.alpha_bar_at(t)
    ab_prev = schedule.alpha_bar_at(t - 1)
    inject = rule.stochastic and t > 1
    if inject:
        if rng_noise is None:
            raise InvalidArgument("stochastic rule needs rng_noise")
        _check_shapes(xt, rng_noise)

    if rule.kind == "ddpm":
        alpha_t = float(schedule.alpha[t - 1])
        beta_t = float(schedule.beta[t - 1])
        mean = (xt - beta_t / math.sqrt(1.0 - ab_t) * eps_hat) / math.sqrt(alpha_t)
        if not inject:
            return mean
        var = beta_t * (1.0 - ab_prev) / (1.0 - ab_t)
        return mean + math.sqrt(var) * rng_noise

    x0_pred = (xt - math.sqrt(1.0 - ab_t) * eps_hat) / math.sqrt(ab_t)
    sigma = rule.eta * math.sqrt(
        (1.0 - ab_prev) / (1.0 - ab_t) * (1.0 - ab_t / ab_prev)
    )
    dir_coeff = math.sqrt(max(1.0 - ab_prev - sigma * sigma, 0.0))
    out = math.sqrt(ab_prev) * x0_pred + dir_coeff * eps_hat
    if inject and sigma > 0.0:
        out = out + sigma * rng_noise
    return out


def reverse_step(
    schedule: NoiseSchedule,
    xt: WindowLatent,
    eps_hat: WindowLatent,
    t: int,
    rule: StepRule,
    rng_noise: WindowLatent | None = None,
) -> WindowLatent:
    """One reverse step from level ``t`` to ``t-1`` on window latents."""
    noise = rng_noise.values if rng_noise is not None else None
    return WindowLatent(reverse_values(schedule, xt.values, eps_hat.values, t, rule, noise))
