"""End-to-end reverse-diffusion strategies over a panorama.

Three strategies share one seeded random stream with a fixed draw order:
initial noise first, then per step one shift integer (drawn and discarded by
strategies that do not shift) followed by the step's panorama-wide injected
noise when the rule is stochastic.  This makes runs bitwise reproducible and
lets strategies be compared like-for-like under one seed.

* ``plain``: single window covering the whole panorama, one call per step.
* ``multidiffusion``: every static overlapping window is predicted, the
  noise estimates are scatter-added into a panorama accumulator, divided by
  the per-pixel coverage count, and one reverse step is applied globally.
* ``shifted``: the panorama is cyclically translated by the step's shift,
  tiled into disjoint windows that are predicted and reverse-stepped
  independently, re-concatenated, and translated back.

Window evaluation order within a step is ascending offset and the reduction
is sequential in that order; across steps execution is strictly sequential.
``window_hook`` is an extension point invoked per window before its noise
estimate is consumed (empty by default; a perceptual-synchronization pass
would attach here).
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .denoisers import Denoiser
from .errors import InvalidConfig, InvalidGeometry
from .grid import PanoramaLatent, WindowLatent
from .planner import ShiftSampler, boundary_positions, plan_shifted, plan_static
from .protocol import digest8
from .schedule import NoiseSchedule, StepRule, reverse_values

STRATEGIES = ("plain", "multidiffusion", "shifted")

# probe(step=..., kind="window"|"fused", offset=..., eps=..., shift=...)
Probe = Callable[..., None]
WindowHook = Callable[[int, int, np.ndarray, np.ndarray], None]


@dataclass(frozen=True)
class SamplerConfig:
    strategy: str
    panorama_width: int
    window_width: int
    height: int
    channels: int
    steps: int
    rule: StepRule = StepRule("ddim", 0.0)
    seed: int = 0
    stride: int | None = None
    shift_law: str = "uniform_integer"
    fixed_shifts: tuple[int, ...] = ()
    condition: int = 0

    def __post_init__(self) -> None:
        if self.strategy not in STRATEGIES:
            raise InvalidConfig(f"unknown strategy {self.strategy!r}")
        if self.strategy == "plain" and self.panorama_width != self.window_width:
            raise InvalidConfig(
                f"plain strategy needs panorama width == window width, got "
                f"{self.panorama_width} != {self.window_width}"
            )
        if self.strategy == "multidiffusion" and self.stride is None:
            raise InvalidConfig("multidiffusion strategy needs a stride")
        if min(self.height, self.channels, self.steps) < 1:
            raise InvalidConfig("height, channels and steps must all be >= 1")


@dataclass
class RunRecord:
    final: PanoramaLatent
    calls_per_step: int
    total_calls: int
    shifts: tuple[int, ...]
    wall_ms_per_step: list[float]
    config: SamplerConfig
    init_digest: str
    denoiser_descriptor: str

    @property
    def total_wall_ms(self) -> float:
        return float(sum(self.wall_ms_per_step))


def _make_shift_sampler(cfg: SamplerConfig, rng: np.random.Generator) -> ShiftSampler:
    return ShiftSampler(
        law=cfg.shift_law,
        window_width=cfg.window_width,
        rng=rng,
        sequence=tuple(cfg.fixed_shifts),
    )


def _step_noise(
    cfg: SamplerConfig, rule: StepRule, t: int, rng: np.random.Generator
) -> np.ndarray | None:
    if rule.stochastic and t > 1:
        return rng.standard_normal((cfg.height, cfg.panorama_width, cfg.channels))
    return None


def run(
    cfg: SamplerConfig,
    denoiser: Denoiser,
    schedule: NoiseSchedule,
    probe: Probe | None = None,
    window_hook: WindowHook | None = None,
) -> RunRecord:
    if schedule.steps != cfg.steps:
        raise InvalidConfig(
            f"schedule has {schedule.steps} steps but config asks for {cfg.steps}"
        )
    if cfg.strategy == "plain":
        return run_plain(cfg, denoiser, schedule, probe, window_hook)
    if cfg.strategy == "multidiffusion":
        return run_multidiffusion(cfg, denoiser, schedule, probe, window_hook)
    return run_shifted(cfg, denoiser, schedule, probe, window_hook)


def _start(cfg: SamplerConfig):
    rng = np.random.default_rng(cfg.seed)
    values = rng.standard_normal((cfg.height, cfg.panorama_width, cfg.channels))
    sampler = _make_shift_sampler(cfg, rng)
    return rng, values, sampler, digest8(values.tobytes()).hex()


def run_plain(
    cfg: SamplerConfig,
    denoiser: Denoiser,
    schedule: NoiseSchedule,
    probe: Probe | None = None,
    window_hook: WindowHook | None = None,
) -> RunRecord:
    rng, values, sampler, init_digest = _start(cfg)
    shifts, walls = [], []
    for t in range(cfg.steps, 0, -1):
        started = time.perf_counter()
        shifts.append(sampler.sample(t))
        noise = _step_noise(cfg, cfg.rule, t, rng)
        eps = denoiser.predict_eps(WindowLatent(values), t, cfg.condition, 0).values
        if window_hook is not None:
            window_hook(t, 0, values, eps)
        if probe is not None:
            probe(step=t, kind="window", offset=0, eps=eps, shift=shifts[-1])
        values = reverse_values(schedule, values, eps, t, cfg.rule, noise)
        walls.append((time.perf_counter() - started) * 1e3)
    return RunRecord(
        PanoramaLatent(values), 1, cfg.steps, tuple(shifts), walls, cfg,
        init_digest, denoiser.descriptor,
    )


def run_multidiffusion(
    cfg: SamplerConfig,
    denoiser: Denoiser,
    schedule: NoiseSchedule,
    probe: Probe | None = None,
    window_hook: WindowHook | None = None,
) -> RunRecord:
    plan = plan_static(cfg.panorama_width, cfg.window_width, cfg.stride)
    rng, values, sampler, init_digest = _start(cfg)
    w = cfg.window_width
    coverage = np.zeros((1, cfg.panorama_width, 1))
    for off in plan.offsets:
        coverage[:, off : off + w, :] += 1.0
    if coverage.min() == 0.0:
        raise InvalidGeometry(
            f"stride {cfg.stride} > window width {w} leaves panorama columns uncovered"
        )
    shifts, walls = [], []
    for t in range(cfg.steps, 0, -1):
        started = time.perf_counter()
        shifts.append(sampler.sample(t))
        noise = _step_noise(cfg, cfg.rule, t, rng)
        acc = np.zeros_like(values)
        for off in plan.offsets:
            win = values[:, off : off + w, :]
            eps = denoiser.predict_eps(WindowLatent(win), t, cfg.condition, off).values
            if window_hook is not None:
                window_hook(t, off, win, eps)
            if probe is not None:
                probe(step=t, kind="window", offset=off, eps=eps, shift=shifts[-1])
            acc[:, off : off + w, :] += eps
        fused = acc / coverage
        if probe is not None:
            probe(step=t, kind="fused", offset=0, eps=fused, shift=shifts[-1])
        values = reverse_values(schedule, values, fused, t, cfg.rule, noise)
        walls.append((time.perf_counter() - started) * 1e3)
    n = len(plan.offsets)
    return RunRecord(
        PanoramaLatent(values), n, n * cfg.steps, tuple(shifts), walls, cfg,
        init_digest, denoiser.descriptor,
    )


def run_shifted(
    cfg: SamplerConfig,
    denoiser: Denoiser,
    schedule: NoiseSchedule,
    probe: Probe | None = None,
    window_hook: WindowHook | None = None,
) -> RunRecord:
    # Raises InvalidGeometry before any randomness is consumed.
    plan_shifted(cfg.panorama_width, cfg.window_width, 0)
    rng, values, sampler, init_digest = _start(cfg)
    w = cfg.window_width
    n = cfg.panorama_width // w
    shifts, walls = [], []
    for t in range(cfg.steps, 0, -1):
        started = time.perf_counter()
        s = sampler.sample(t)
        shifts.append(s)
        noise = _step_noise(cfg, cfg.rule, t, rng)
        # Window k of the translated panorama covers source columns
        # (s + k*w) mod W', matching boundary_positions of the step's plan.
        shifted = np.roll(values, -s, axis=1)
        shifted_noise = np.roll(noise, -s, axis=1) if noise is not None else None
        pieces = []
        for k in range(n):
            off = k * w
            win = shifted[:, off : off + w, :]
            source_off = (s + off) % cfg.panorama_width
            eps = denoiser.predict_eps(
                WindowLatent(win), t, cfg.condition, source_off
            ).values
            if window_hook is not None:
                window_hook(t, source_off, win, eps)
            if probe is not None:
                probe(step=t, kind="window", offset=source_off, eps=eps, shift=s)
            win_noise = (
                shifted_noise[:, off : off + w, :] if shifted_noise is not None else None
            )
            pieces.append(reverse_values(schedule, win, eps, t, cfg.rule, win_noise))
        values = np.roll(np.concatenate(pieces, axis=1), s, axis=1)
        walls.append((time.perf_counter() - started) * 1e3)
    return RunRecord(
        PanoramaLatent(values), n, n * cfg.steps, tuple(shifts), walls, cfg,
        init_digest, denoiser.descriptor,
    )


def run_compare(
    cfgs: list[SamplerConfig],
    denoiser: Denoiser,
    schedule: NoiseSchedule,
):
    """Run each config (same seed expected) and attach a metrics bundle."""
    from .metrics import bundle_metrics

    records = [run(cfg, denoiser, schedule) for cfg in cfgs]
    return records, bundle_metrics(records)


def disjoint_boundaries(cfg: SamplerConfig) -> set[int]:
    """The zero-shift disjoint tiling's left-edge columns for this geometry."""
    return boundary_positions(plan_shifted(cfg.panorama_width, cfg.window_width, 0))
