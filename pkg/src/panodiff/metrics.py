"""Seam, coverage, and compute metrics for completed runs.

The seam metric is a first-order proxy for visible border discontinuities:
mean squared cyclic column difference at designated boundary columns divided
by the same statistic over the remaining columns.  A ratio near 1 means the
boundary columns are statistically indistinguishable from the interior.

Seam thresholds are never hard-coded: they are calibrated per prior
parameterization from ground-truth prior samples (99th percentile of their
ratios -> no-seam threshold) and disjoint-static runs (1st percentile ->
seam threshold), and the calibration fails loudly when the two overlap.
"""

from __future__ import annotations

import csv
import os
from dataclasses import dataclass

import numpy as np
from scipy.stats import chi2

from .errors import CalibrationFailed, InvalidArgument
from .grid import PanoramaLatent

CSV_COLUMNS = (
    "strategy",
    "panorama_width",
    "window_width",
    "stride",
    "steps",
    "seed",
    "calls_per_step",
    "total_calls",
    "wall_ms",
    "boundary_energy",
    "interior_energy",
    "ratio",
    "coverage_p",
)


@dataclass(frozen=True)
class SeamReport:
    boundary_energy: float
    interior_energy: float
    ratio: float | None  # None when the interior is degenerate (NotApplicable)
    boundaries: frozenset[int]


@dataclass(frozen=True)
class CoverageReport:
    counts: np.ndarray  # boundary hits per panorama column
    chi_square: float
    p_value: float
    expected_per_column: float


@dataclass(frozen=True)
class ComputeReport:
    calls_per_step: int
    total_calls: int
    wall_ms_per_step: float
    total_wall_ms: float


@dataclass(frozen=True)
class CalibrationResult:
    no_seam_threshold: float
    seam_threshold: float
    prior_ratios: tuple[float, ...]
    disjoint_ratios: tuple[float, ...]


def seam_energy(p: PanoramaLatent, boundaries: set[int]) -> SeamReport:
    """Mean squared cyclic column difference at/off the boundary columns."""
    cols = sorted(int(b) for b in boundaries)
    if not cols:
        raise InvalidArgument("boundary set must be nonempty")
    if len(cols) >= p.width or cols[0] < 0 or cols[-1] >= p.width:
        raise InvalidArgument(
            f"boundaries must be a strict subset of columns 0..{p.width - 1}"
        )
    sq = (p.values - np.roll(p.values, 1, axis=1)) ** 2
    per_column = sq.mean(axis=(0, 2))
    mask = np.zeros(p.width, dtype=bool)
    mask[cols] = True
    boundary = float(per_column[mask].mean())
    interior = float(per_column[~mask].mean())
    ratio = boundary / interior if interior > 1e-12 else None
    return SeamReport(boundary, interior, ratio, frozenset(cols))


def coverage_report(
    shifts, panorama_width: int, window_width: int
) -> CoverageReport:
    """Boundary-hit histogram over columns plus a uniformity chi-square.

    Each shift puts one boundary in every window-width residue class, so the
    per-column counts are the shift histogram replicated n = W'/W times.  The
    chi-square is therefore evaluated on the residue classes (W bins, W-1
    degrees of freedom); testing the replicated columns directly would
    overstate the degrees of freedom.
    """
    shifts = np.asarray(list(shifts), dtype=np.int64)
    n = panorama_width // window_width
    counts = np.zeros(panorama_width, dtype=np.int64)
    for k in range(n):
        cols = (shifts + k * window_width) % panorama_width
        np.add.at(counts, cols, 1)
    class_counts = np.bincount(shifts % window_width, minlength=window_width)
    expected = len(shifts) / window_width
    stat = float(((class_counts - expected) ** 2 / expected).sum()) if expected > 0 else 0.0
    p_value = float(chi2.sf(stat, window_width - 1))
    counts.setflags(write=False)
    return CoverageReport(counts, stat, p_value, len(shifts) * n / panorama_width)


def interior_tile_boundaries(panorama_width: int, window_width: int) -> set[int]:
    """Disjoint-tiling seam columns excluding the wrap column 0.

    Static (non-cyclic) baselines have a real discontinuity across the wrap
    pair regardless of tiling quality, so seam comparisons are made on the
    interior tile edges where all strategies are on equal footing.
    """
    return set(range(window_width, panorama_width, window_width))


def compute_report(record) -> ComputeReport:
    walls = record.wall_ms_per_step
    return ComputeReport(
        calls_per_step=record.calls_per_step,
        total_calls=record.total_calls,
        wall_ms_per_step=float(np.mean(walls)) if walls else 0.0,
        total_wall_ms=float(np.sum(walls)),
    )


def threshold_calibration(
    prior_ratios, disjoint_ratios
) -> tuple[float, float]:
    """Freeze (no_seam_threshold, seam_threshold) from calibration ratios."""
    prior_ratios = [r for r in prior_ratios if r is not None]
    disjoint_ratios = [r for r in disjoint_ratios if r is not None]
    if len(prior_ratios) < 100 or len(disjoint_ratios) < 100:
        raise InvalidArgument("calibration needs >= 100 ratios on each side")
    no_seam = float(np.percentile(prior_ratios, 99))
    seam = float(np.percentile(disjoint_ratios, 1))
    if not no_seam < seam:
        raise CalibrationFailed(
            f"no-seam threshold {no_seam:.4f} does not fall below seam threshold "
            f"{seam:.4f}; the prior carries no seam signal (correlation length too small?)"
        )
    return no_seam, seam


def calibrate_thresholds(
    prior,
    schedule,
    window_width: int,
    height: int,
    channels: int,
    seeds: int = 100,
    base_seed: int = 0,
    rule=None,
) -> CalibrationResult:
    """Run the calibration oracle: prior samples vs disjoint-static runs."""
    from .samplers import SamplerConfig, run_multidiffusion
    from .schedule import StepRule

    rule = rule or StepRule("ddpm")
    width = prior.panorama_width
    boundaries = interior_tile_boundaries(width, window_width)
    prior_ratios = []
    for i in range(seeds):
        rng = np.random.default_rng(base_seed + i)
        sample = PanoramaLatent(prior.sample(height, channels, rng))
        prior_ratios.append(seam_energy(sample, boundaries).ratio)
    disjoint_ratios = []
    from .denoisers import AnalyticDenoiser

    denoiser = AnalyticDenoiser(prior, schedule)
    for i in range(seeds):
        cfg = SamplerConfig(
            strategy="multidiffusion",
            panorama_width=width,
            window_width=window_width,
            height=height,
            channels=channels,
            steps=schedule.steps,
            rule=rule,
            seed=base_seed + 10_000 + i,
            stride=window_width,
        )
        record = run_multidiffusion(cfg, denoiser, schedule)
        disjoint_ratios.append(seam_energy(record.final, boundaries).ratio)
    no_seam, seam = threshold_calibration(prior_ratios, disjoint_ratios)
    return CalibrationResult(
        no_seam, seam, tuple(prior_ratios), tuple(disjoint_ratios)
    )


def metrics_row(record, boundaries: set[int] | None = None) -> dict:
    """One CSV row for a completed run."""
    cfg = record.config
    if boundaries is None:
        boundaries = interior_tile_boundaries(cfg.panorama_width, cfg.window_width)
    seam = seam_energy(record.final, boundaries)
    comp = compute_report(record)
    coverage_p = ""
    if cfg.strategy == "shifted":
        coverage_p = f"{coverage_report(record.shifts, cfg.panorama_width, cfg.window_width).p_value:.6g}"
    return {
        "strategy": cfg.strategy,
        "panorama_width": cfg.panorama_width,
        "window_width": cfg.window_width,
        "stride": cfg.stride if cfg.stride is not None else "",
        "steps": cfg.steps,
        "seed": cfg.seed,
        "calls_per_step": comp.calls_per_step,
        "total_calls": comp.total_calls,
        "wall_ms": f"{comp.total_wall_ms:.3f}",
        "boundary_energy": f"{seam.boundary_energy:.6g}",
        "interior_energy": f"{seam.interior_energy:.6g}",
        "ratio": f"{seam.ratio:.6g}" if seam.ratio is not None else "n/a",
        "coverage_p": coverage_p,
    }


@dataclass
class MetricsBundle:
    rows: list[dict]


def bundle_metrics(records) -> MetricsBundle:
    return MetricsBundle(rows=[metrics_row(r) for r in records])


def append_csv_rows(path, rows: list[dict], extra_columns: tuple[str, ...] = ()) -> None:
    columns = CSV_COLUMNS + extra_columns
    new_file = not os.path.exists(path) or os.path.getsize(path) == 0
    with open(path, "a", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=columns)
        if new_file:
            writer.writeheader()
        for row in rows:
            writer.writerow(row)
