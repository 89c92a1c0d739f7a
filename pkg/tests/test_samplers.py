import numpy as np
import pytest

from panodiff.denoisers import AnalyticDenoiser, GaussianMRFPrior
from panodiff.errors import InvalidConfig, InvalidGeometry
from panodiff.samplers import (
    SamplerConfig,
    run,
    run_compare,
    run_multidiffusion,
    run_plain,
    run_shifted,
)
from panodiff.schedule import NoiseSchedule, StepRule

DDIM = StepRule("ddim", 0.0)
DDPM = StepRule("ddpm")


@pytest.fixture(scope="module")
def small_setup():
    schedule = NoiseSchedule.linear(50)
    prior = GaussianMRFPrior(64, correlation_length=4.0)
    return schedule, AnalyticDenoiser(prior, schedule)


def test_plain_requires_matching_width():
    with pytest.raises(InvalidConfig):
        SamplerConfig("plain", 256, 64, 2, 1, 50)


def test_unknown_strategy_rejected():
    with pytest.raises(InvalidConfig):
        SamplerConfig("magic", 256, 64, 2, 1, 50)


def test_schedule_step_mismatch(small_setup):
    schedule, den = small_setup
    cfg = SamplerConfig("plain", 64, 64, 2, 1, 49, DDIM, seed=0)
    with pytest.raises(InvalidConfig):
        run(cfg, den, schedule)


def test_shifted_geometry_rejected(small_setup):
    schedule, den = small_setup
    cfg = SamplerConfig("shifted", 64, 48, 2, 1, 50, DDIM, seed=0)
    with pytest.raises(InvalidGeometry):
        run(cfg, den, schedule)


def test_multidiffusion_rejects_uncovered_columns(small_setup):
    schedule, den = small_setup
    cfg = SamplerConfig("multidiffusion", 64, 16, 2, 1, 50, DDIM, seed=0, stride=24)
    with pytest.raises(InvalidGeometry):
        run_multidiffusion(cfg, den, schedule)


def test_plain_call_accounting(small_setup):
    schedule, den = small_setup
    record = run_plain(SamplerConfig("plain", 64, 64, 2, 1, 50, DDIM, seed=0), den, schedule)
    assert record.calls_per_step == 1
    assert record.total_calls == 50
    assert len(record.wall_ms_per_step) == 50


@pytest.mark.parametrize("stride,views", [(16, 13), (32, 7), (64, 4)])
def test_multidiffusion_call_accounting(stride, views, schedule50, analytic256):
    cfg = SamplerConfig(
        "multidiffusion", 256, 64, 2, 1, 50, DDIM, seed=0, stride=stride
    )
    record = run_multidiffusion(cfg, analytic256, schedule50)
    assert record.calls_per_step == views
    assert record.total_calls == views * 50


def test_shifted_call_accounting(schedule50, analytic256):
    cfg = SamplerConfig("shifted", 256, 64, 2, 1, 50, DDIM, seed=0)
    record = run_shifted(cfg, analytic256, schedule50)
    assert record.calls_per_step == 4
    assert record.total_calls == 200
    assert len(record.shifts) == 50
    assert all(0 <= s < 64 for s in record.shifts)


@pytest.mark.parametrize("rule", [DDIM, DDPM])
@pytest.mark.parametrize("seed", [0, 1, 2])
def test_shifted_zero_shift_equals_plain(small_setup, rule, seed):
    schedule, den = small_setup
    spot = run_shifted(
        SamplerConfig("shifted", 64, 64, 3, 2, 50, rule, seed=seed, shift_law="forced_zero"),
        den,
        schedule,
    )
    plain = run_plain(SamplerConfig("plain", 64, 64, 3, 2, 50, rule, seed=seed), den, schedule)
    assert np.array_equal(spot.final.values, plain.final.values)


@pytest.mark.parametrize("rule", [DDIM, DDPM])
@pytest.mark.parametrize("seed", [0, 1, 2])
def test_shifted_zero_shift_equals_disjoint_fusion(small_setup, rule, seed):
    schedule, den = small_setup
    spot = run_shifted(
        SamplerConfig("shifted", 64, 16, 3, 2, 50, rule, seed=seed, shift_law="forced_zero"),
        den,
        schedule,
    )
    md = run_multidiffusion(
        SamplerConfig("multidiffusion", 64, 16, 3, 2, 50, rule, seed=seed, stride=16),
        den,
        schedule,
    )
    assert np.array_equal(spot.final.values, md.final.values)


def test_disjoint_fusion_has_unit_coverage(schedule50, analytic256):
    # With stride == width the fused estimate is the concatenation of the
    # windows' independent estimates, bitwise.
    captured = {}

    def probe(step, kind, offset, eps, shift):
        captured.setdefault(step, {})[(kind, offset)] = np.array(eps)

    cfg = SamplerConfig("multidiffusion", 256, 64, 2, 1, 50, DDIM, seed=3, stride=64)
    run_multidiffusion(cfg, analytic256, schedule50, probe=probe)
    for step, entries in captured.items():
        fused = entries[("fused", 0)]
        stitched = np.concatenate(
            [entries[("window", off)] for off in (0, 64, 128, 192)], axis=1
        )
        assert np.array_equal(fused, stitched)


@pytest.mark.parametrize("stride", [16, 32, 64])
def test_fusion_matches_covering_average_oracle(stride, schedule50, analytic256):
    captured = {}

    def probe(step, kind, offset, eps, shift):
        captured.setdefault(step, {})[(kind, offset)] = np.array(eps)

    cfg = SamplerConfig("multidiffusion", 256, 64, 2, 1, 50, DDIM, seed=4, stride=stride)
    run_multidiffusion(cfg, analytic256, schedule50, probe=probe)
    offsets = list(range(0, 193, stride))
    for step, entries in captured.items():
        fused = entries[("fused", 0)]
        oracle = np.zeros_like(fused)
        for x in range(256):
            covering = [o for o in offsets if o <= x < o + 64]
            stack = [entries[("window", o)][:, x - o, :] for o in covering]
            oracle[:, x, :] = np.mean(stack, axis=0)
        denom = np.maximum(np.abs(oracle), 1e-30)
        assert (np.abs(fused - oracle) / denom).max() < 1e-6


def test_determinism_across_repeated_runs(schedule50, analytic256):
    cfg = SamplerConfig("shifted", 256, 64, 2, 1, 50, DDPM, seed=99)
    a = run_shifted(cfg, analytic256, schedule50)
    b = run_shifted(cfg, analytic256, schedule50)
    assert np.array_equal(a.final.values, b.final.values)
    assert a.shifts == b.shifts
    assert a.init_digest == b.init_digest


def test_run_compare_bundles_metrics(schedule50, analytic256):
    cfgs = [
        SamplerConfig("shifted", 256, 64, 2, 1, 50, DDIM, seed=5),
        SamplerConfig("multidiffusion", 256, 64, 2, 1, 50, DDIM, seed=5, stride=16),
        SamplerConfig("multidiffusion", 256, 64, 2, 1, 50, DDIM, seed=5, stride=64),
    ]
    records, bundle = run_compare(cfgs, analytic256, schedule50)
    assert len(records) == len(bundle.rows) == 3
    by_strategy = {
        (r.config.strategy, r.config.stride): r.calls_per_step for r in records
    }
    assert by_strategy[("multidiffusion", 16)] / by_strategy[("shifted", None)] == 3.25
    # shared seed -> identical initial noise across strategies
    assert len({r.init_digest for r in records}) == 1


def test_plain_chain_mean_matches_prior_mean():
    # Monte-Carlo oracle: with the exact Bayes noise predictor, the sample
    # mean of the generated distribution must match the prior mean.
    schedule = NoiseSchedule.linear(50)
    prior = GaussianMRFPrior(16, correlation_length=4.0)
    den = AnalyticDenoiser(prior, schedule)
    finals = []
    for seed in range(1000):
        cfg = SamplerConfig("plain", 16, 16, 2, 1, 50, DDPM, seed=seed)
        finals.append(run_plain(cfg, den, schedule).final.values)
    finals = np.array(finals)
    mean = finals.mean(axis=0)
    se = finals.std(axis=0, ddof=1) / np.sqrt(len(finals))
    target = prior.mean_profile[None, :, None]
    assert np.all(np.abs(mean - target) < 3.0 * se)
