"""Window layout planning.

Two layout families:

* static overlapping plans (stride <= window width, flat panorama, no
  wrap-around) used by the fusion baseline, and
* shifted disjoint plans (stride == window width, cyclic wrap-around) whose
  per-timestep shift is drawn by a :class:`ShiftSampler`.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import FixtureExhausted, InvalidArgument, InvalidGeometry

SHIFT_LAWS = ("uniform_integer", "forced_zero", "fixed_sequence")


@dataclass(frozen=True)
class WindowPlan:
    panorama_width: int
    window_width: int
    stride: int
    offsets: tuple[int, ...]
    shift: int = 0
    wraparound: bool = False


def view_count(panorama_width: int, window_width: int, stride: int) -> int:
    """Number of static covering windows: (W' - W)/stride + 1."""
    return (panorama_width - window_width) // stride + 1


def plan_static(panorama_width: int, window_width: int, stride: int) -> WindowPlan:
    """Overlapping fixed windows at offsets {0, stride, ..., W'-W}."""
    if stride < 1:
        raise InvalidGeometry(f"stride must be >= 1, got {stride}")
    if window_width < 1 or window_width > panorama_width:
        raise InvalidGeometry(
            f"window width {window_width} invalid for panorama width {panorama_width}"
        )
    if (panorama_width - window_width) % stride != 0:
        raise InvalidGeometry(
            f"(panorama_width - window_width) = {panorama_width - window_width} "
            f"is not divisible by stride {stride}"
        )
    offsets = tuple(range(0, panorama_width - window_width + 1, stride))
    return WindowPlan(panorama_width, window_width, stride, offsets)


def plan_shifted(panorama_width: int, window_width: int, shift: int) -> WindowPlan:
    """Disjoint tiling of the shift-translated panorama (stride == width)."""
    if window_width < 1 or panorama_width % window_width != 0:
        raise InvalidGeometry(
            f"panorama width {panorama_width} is not a multiple of window width {window_width}"
        )
    if not 0 <= shift < window_width:
        raise InvalidGeometry(f"shift {shift} outside [0, {window_width})")
    offsets = tuple(range(0, panorama_width, window_width))
    return WindowPlan(
        panorama_width, window_width, window_width, offsets, shift=shift, wraparound=True
    )


def boundary_positions(plan: WindowPlan) -> set[int]:
    """Left-edge columns of the plan's windows in panorama coordinates."""
    if plan.wraparound:
        return {
            (plan.shift + k * plan.window_width) % plan.panorama_width
            for k in range(len(plan.offsets))
        }
    return set(plan.offsets)


@dataclass
class ShiftSampler:
    """Per-timestep shift source.

    When an ``rng`` is attached, every call consumes exactly one uniform
    integer draw regardless of law, so toggling laws or strategies under one
    seed leaves all later randomness aligned.  ``fixed_sequence`` replays
    recorded values in call order.
    """

    law: str
    window_width: int
    rng: np.random.Generator | None = None
    sequence: tuple[int, ...] = ()
    calls: int = field(default=0, init=False)

    def __post_init__(self) -> None:
        if self.law not in SHIFT_LAWS:
            raise InvalidArgument(f"unknown shift law {self.law!r}")
        if self.law == "uniform_integer" and self.rng is None:
            raise InvalidArgument("uniform_integer law needs an rng")

    def sample(self, t: int) -> int:
        draw = None
        if self.rng is not None:
            draw = int(self.rng.integers(0, self.window_width))
        index = self.calls
        self.calls += 1
        if self.law == "uniform_integer":
            return draw
        if self.law == "forced_zero":
            return 0
        if index >= len(self.sequence):
            raise FixtureExhausted(
                f"fixed shift sequence exhausted after {index} draws (t={t})"
            )
        return int(self.sequence[index])


def sample_shift(sampler: ShiftSampler, t: int) -> int:
    return sampler.sample(t)


def load_fixed_shifts(path) -> tuple[int, ...]:
    """Read one integer per line; blank lines ignored."""
    with open(path, "r", encoding="ascii") as fh:
        return tuple(int(line) for line in fh if line.strip())
