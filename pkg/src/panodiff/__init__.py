"""Tiled-diffusion sampling engine with shifted non-overlapping windows.

Generates wide panorama latents from a window-sized denoiser either by the
classic overlapping-window fusion baseline or by translating a disjoint
tiling with a fresh random shift at every timestep, plus analytic denoisers
and seam/coverage/compute metrics that make the behavior measurable at desk
scale.
"""

from .denoisers import (
    AnalyticDenoiser,
    ExternalDenoiser,
    GaussianMRFPrior,
    RecordingDenoiser,
    ReplayDenoiser,
)
from .errors import (
    CalibrationFailed,
    FixtureDiverged,
    FixtureExhausted,
    InvalidArgument,
    InvalidConfig,
    InvalidGeometry,
    InvalidWindow,
    NumericalFailure,
    PanodiffError,
    ProtocolError,
    ProtocolTimeout,
    ShapeMismatch,
)
from .grid import (
    PanoramaLatent,
    WindowLatent,
    concat_windows,
    crop_window,
    dump_raw,
    load_raw,
    translate,
)
from .metrics import (
    CoverageReport,
    SeamReport,
    calibrate_thresholds,
    coverage_report,
    seam_energy,
    threshold_calibration,
)
from .planner import (
    ShiftSampler,
    WindowPlan,
    boundary_positions,
    plan_shifted,
    plan_static,
    sample_shift,
)
from .samplers import (
    RunRecord,
    SamplerConfig,
    run,
    run_compare,
    run_multidiffusion,
    run_plain,
    run_shifted,
)
from .schedule import NoiseSchedule, StepRule, forward_sample, reverse_step

__version__ = "0.1.0"
