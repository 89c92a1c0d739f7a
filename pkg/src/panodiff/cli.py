"""Reproducible experiment runner.

Subcommands: ``generate``, ``compare``, ``calibrate``, ``serve-check``.
Exit codes are a stable scripting contract: 0 success, 1 runtime failure,
2 configuration failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import metrics
from .config import ExperimentConfig, load_config
from .denoisers import AnalyticDenoiser, ExternalDenoiser, GaussianMRFPrior, ReplayDenoiser
from .errors import (
    CalibrationFailed,
    InvalidConfig,
    InvalidGeometry,
    PanodiffError,
)
from .grid import PanoramaLatent, write_raw
from .planner import load_fixed_shifts
from .samplers import RunRecord, SamplerConfig, run
from .schedule import NoiseSchedule, StepRule


def write_pgm(path, p: PanoramaLatent, digest: str) -> None:
    """Min-max normalized P5 image, channel pages stacked vertically."""
    arr = p.values
    lo, hi = float(arr.min()), float(arr.max())
    scale = 255.0 / (hi - lo) if hi > lo else 0.0
    pages = np.concatenate([arr[:, :, c] for c in range(p.channels)], axis=0)
    pixels = np.clip((pages - lo) * scale, 0.0, 255.0).astype(np.uint8)
    header = f"P5\n# cfg:{digest}\n{pixels.shape[1]} {pixels.shape[0]}\n255\n"
    with open(path, "wb") as fh:
        fh.write(header.encode("ascii"))
        fh.write(pixels.tobytes())


def _build_schedule(cfg: ExperimentConfig) -> NoiseSchedule:
    steps = cfg.get("run", "steps")
    if cfg.get("run", "schedule") == "cosine":
        return NoiseSchedule.cosine(steps)
    return NoiseSchedule.linear(steps)


def _build_prior(cfg: ExperimentConfig) -> GaussianMRFPrior:
    return GaussianMRFPrior(
        panorama_width=cfg.get("run", "panorama_width"),
        marginal_std=cfg.get("prior", "sigma0"),
        correlation_length=cfg.get("prior", "correlation_length"),
        mean_amplitude=cfg.get("prior", "amplitude"),
    )


def _build_denoiser(cfg: ExperimentConfig, schedule: NoiseSchedule):
    kind = cfg.get("denoiser", "kind")
    if kind == "mrf":
        return AnalyticDenoiser(_build_prior(cfg), schedule)
    if kind == "replay":
        fixture = cfg.get("denoiser", "fixture")
        if not fixture:
            raise InvalidConfig("replay denoiser needs denoiser.fixture")
        return ReplayDenoiser(fixture)
    command = cfg.get("denoiser", "command")
    if not command:
        raise InvalidConfig("external denoiser needs denoiser.command")
    return ExternalDenoiser(
        command,
        width=cfg.get("run", "window_width"),
        height=cfg.get("run", "height"),
        channels=cfg.get("run", "channels"),
        steps=cfg.get("run", "steps"),
        schedule_kind=cfg.get("run", "schedule"),
        timeout=cfg.get("denoiser", "timeout"),
    )


def _sampler_config(cfg: ExperimentConfig, strategy=None, stride=None, seed=None) -> SamplerConfig:
    strategy = strategy or cfg.get("run", "strategy")
    fixed_shifts = ()
    if cfg.get("run", "shift_law") == "fixed_sequence":
        shift_file = cfg.get("run", "shift_file")
        if not shift_file:
            raise InvalidConfig("fixed_sequence shift law needs run.shift_file")
        fixed_shifts = load_fixed_shifts(shift_file)
    return SamplerConfig(
        strategy=strategy,
        panorama_width=cfg.get("run", "panorama_width"),
        window_width=cfg.get("run", "window_width"),
        height=cfg.get("run", "height"),
        channels=cfg.get("run", "channels"),
        steps=cfg.get("run", "steps"),
        rule=StepRule(cfg.get("run", "rule"), cfg.get("run", "eta")),
        seed=cfg.get("run", "seed") if seed is None else seed,
        stride=cfg.get("run", "stride") if stride is None else stride,
        shift_law=cfg.get("run", "shift_law"),
        fixed_shifts=fixed_shifts,
    )


def _validate_geometry(sampler_cfg: SamplerConfig) -> None:
    wprime, w = sampler_cfg.panorama_width, sampler_cfg.window_width
    if sampler_cfg.strategy == "shifted" and wprime % w != 0:
        raise InvalidGeometry(
            f"shifted strategy needs the panorama width ({wprime}) divisible by "
            f"the window width ({w})"
        )
    if sampler_cfg.strategy == "multidiffusion" and (wprime - w) % sampler_cfg.stride != 0:
        raise InvalidGeometry(
            f"multidiffusion needs (panorama_width - window_width) = {wprime - w} "
            f"divisible by the stride ({sampler_cfg.stride})"
        )


def _run_name(sampler_cfg: SamplerConfig) -> str:
    base = sampler_cfg.strategy
    if sampler_cfg.strategy == "multidiffusion":
        base = f"{base}{sampler_cfg.stride}"
    return f"{base}_seed{sampler_cfg.seed}"


def _emit_run(cfg: ExperimentConfig, out: Path, record: RunRecord, digest: str) -> dict:
    name = _run_name(record.config)
    manifest = {"name": name, "config_digest": digest, "init_digest": record.init_digest}
    if cfg.get("output", "emit_raw"):
        write_raw(record.final, out / f"{name}.plat")
        manifest["raw"] = f"{name}.plat"
    if cfg.get("output", "emit_pgm"):
        write_pgm(out / f"{name}.pgm", record.final, digest)
        manifest["pgm"] = f"{name}.pgm"
    row = metrics.metrics_row(record)
    if cfg.get("output", "emit_csv"):
        metrics.append_csv_rows(out / "metrics.csv", [dict(row, config_digest=digest)],
                                extra_columns=("config_digest",))
    with open(out / f"{name}.meta.json", "w") as fh:
        json.dump(manifest, fh, indent=2)
    return row


def _out_dir(cfg: ExperimentConfig) -> Path:
    out = Path(cfg.get("output", "dir"))
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_generate(cfg: ExperimentConfig, seeds: int = 1) -> int:
    schedule = _build_schedule(cfg)
    out = _out_dir(cfg)
    digest = cfg.digest()
    base_seed = cfg.get("run", "seed")
    denoiser = _build_denoiser(cfg, schedule)
    try:
        for index in range(seeds):
            sampler_cfg = _sampler_config(cfg, seed=base_seed + index)
            _validate_geometry(sampler_cfg)
            record = run(sampler_cfg, denoiser, schedule)
            row = _emit_run(cfg, out, record, digest)
            print(
                f"{_run_name(sampler_cfg)}: calls/step={row['calls_per_step']} "
                f"total={row['total_calls']} seam_ratio={row['ratio']}"
            )
    finally:
        if hasattr(denoiser, "close"):
            denoiser.close()
    return 0


def _parse_compare_entry(entry: str) -> tuple[str, int | None]:
    entry = entry.strip()
    if "@" in entry:
        name, stride = entry.split("@", 1)
        return name.strip(), int(stride)
    return entry, None


def cmd_compare(cfg: ExperimentConfig, seeds: int = 1) -> int:
    schedule = _build_schedule(cfg)
    out = _out_dir(cfg)
    digest = cfg.digest()
    denoiser = _build_denoiser(cfg, schedule)
    entries = [
        _parse_compare_entry(e)
        for e in cfg.get("compare", "strategies").split(",")
        if e.strip()
    ]
    if not entries:
        raise InvalidConfig("compare.strategies is empty")
    base_seed = cfg.get("run", "seed")
    sweep_seeds = max(seeds, cfg.get("compare", "seeds"))
    per_strategy_rows: dict[str, list[dict]] = {}
    montage: list[PanoramaLatent] = []
    try:
        for index in range(sweep_seeds):
            for strategy, stride in entries:
                sampler_cfg = _sampler_config(
                    cfg, strategy=strategy, stride=stride, seed=base_seed + index
                )
                _validate_geometry(sampler_cfg)
                record = run(sampler_cfg, denoiser, schedule)
                row = _emit_run(cfg, out, record, digest)
                key = _run_name(sampler_cfg).rsplit("_seed", 1)[0]
                per_strategy_rows.setdefault(key, []).append(row)
                if index == 0:
                    montage.append(record.final)
    finally:
        if hasattr(denoiser, "close"):
            denoiser.close()

    if len(montage) > 1:
        rows = [m.values for m in montage]
        separator = np.full((2, rows[0].shape[1], rows[0].shape[2]), max(r.max() for r in rows))
        stacked = []
        for i, r in enumerate(rows):
            if i:
                stacked.append(separator)
            stacked.append(r)
        write_pgm(out / "compare_montage.pgm", PanoramaLatent(np.concatenate(stacked, axis=0)), digest)

    summary_path = out / "summary.csv"
    shifted_calls = None
    for key, rows in per_strategy_rows.items():
        if key == "shifted":
            shifted_calls = rows[0]["calls_per_step"]
    with open(summary_path, "w") as fh:
        fh.write("name,calls_per_step,total_calls,calls_ratio_vs_shifted,"
                 "seam_ratio_p1,seam_ratio_p50,seam_ratio_p99,config_digest\n")
        for key, rows in per_strategy_rows.items():
            ratios = [float(r["ratio"]) for r in rows if r["ratio"] != "n/a"]
            pcts = (
                np.percentile(ratios, [1, 50, 99]) if ratios else [float("nan")] * 3
            )
            calls_ratio = (
                f"{rows[0]['calls_per_step'] / shifted_calls:.6g}" if shifted_calls else ""
            )
            fh.write(
                f"{key},{rows[0]['calls_per_step']},{rows[0]['total_calls']},"
                f"{calls_ratio},{pcts[0]:.6g},{pcts[1]:.6g},{pcts[2]:.6g},{digest}\n"
            )
    print(f"compare: wrote {summary_path}")
    return 0


def cmd_calibrate(cfg: ExperimentConfig) -> int:
    schedule = _build_schedule(cfg)
    out = _out_dir(cfg)
    prior = _build_prior(cfg)
    result = metrics.calibrate_thresholds(
        prior,
        schedule,
        window_width=cfg.get("run", "window_width"),
        height=cfg.get("run", "height"),
        channels=cfg.get("run", "channels"),
        seeds=cfg.get("calibration", "seeds"),
        base_seed=cfg.get("run", "seed"),
        rule=StepRule(cfg.get("run", "rule"), cfg.get("run", "eta")),
    )
    path = out / "thresholds.csv"
    with open(path, "w") as fh:
        fh.write("no_seam_threshold,seam_threshold,config_digest\n")
        fh.write(f"{result.no_seam_threshold:.10g},{result.seam_threshold:.10g},{cfg.digest()}\n")
    print(
        f"calibrate: no_seam={result.no_seam_threshold:.4f} "
        f"seam={result.seam_threshold:.4f} -> {path}"
    )
    return 0


def cmd_serve_check(cfg: ExperimentConfig, cycles: int) -> int:
    schedule = _build_schedule(cfg)
    if cfg.get("denoiser", "kind") != "external":
        raise InvalidConfig("serve-check needs an external denoiser (--denoiser external:<cmd>)")
    denoiser = _build_denoiser(cfg, schedule)
    w = cfg.get("run", "window_width")
    h = cfg.get("run", "height")
    c = cfg.get("run", "channels")
    steps = cfg.get("run", "steps")
    rng = np.random.default_rng(cfg.get("run", "seed"))
    echo_exact = 0
    from .grid import WindowLatent
    from .protocol import payload_to_bytes

    try:
        for i in range(cycles):
            t = 1 + i % steps
            window = WindowLatent(rng.standard_normal((h, w, c)).astype("<f4"))
            response = denoiser.predict_eps(window, t, 0, 0)
            if payload_to_bytes(response.values) == payload_to_bytes(window.values):
                echo_exact += 1
    finally:
        denoiser.close()
    print(f"serve-check: {cycles} cycles ok, {echo_exact} byte-exact echoes")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="panodiff", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("generate", "compare", "calibrate", "serve-check"):
        p = sub.add_parser(name)
        p.add_argument("--config", default=None, help="config file path")
        p.add_argument("--set", dest="overrides", action="append", default=[],
                       metavar="SECTION.KEY=VALUE")
        p.add_argument("--out", default=None, help="output directory")
        p.add_argument("--seeds", type=int, default=None, help="sweep size")
        p.add_argument("--denoiser", default=None,
                       help="mrf, replay, or external:<cmd>")
        if name == "serve-check":
            p.add_argument("--cycles", type=int, default=10)
    return parser


def _effective_config(args) -> ExperimentConfig:
    overrides = list(args.overrides)
    if args.out is not None:
        overrides.append(f"output.dir={args.out}")
    if args.denoiser is not None:
        if args.denoiser.startswith("external:"):
            overrides.append("denoiser.kind=external")
            overrides.append(f"denoiser.command={args.denoiser[len('external:'):]}")
        else:
            overrides.append(f"denoiser.kind={args.denoiser}")
    return load_config(args.config, overrides)


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = _effective_config(args)
        seeds = args.seeds if args.seeds is not None else 1
        if args.command == "generate":
            return cmd_generate(cfg, seeds=seeds)
        if args.command == "compare":
            return cmd_compare(cfg, seeds=seeds)
        if args.command == "calibrate":
            return cmd_calibrate(cfg)
        return cmd_serve_check(cfg, cycles=args.cycles)
    except (InvalidConfig, InvalidGeometry) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except CalibrationFailed as exc:
        print(f"calibration failed: {exc}", file=sys.stderr)
        return 1
    except (PanodiffError, OSError) as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    raise SystemExit(main())
