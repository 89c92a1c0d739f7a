"""Exception hierarchy for the panodiff engine."""


class PanodiffError(Exception):
    """Base class for all engine errors."""


class InvalidArgument(PanodiffError):
    """A caller-supplied value violates a documented precondition."""


class InvalidWindow(PanodiffError):
    """A window crop request exceeds the panorama geometry."""


class ShapeMismatch(PanodiffError):
    """Two latents that must agree in shape do not."""


class InvalidGeometry(PanodiffError):
    """Panorama/window/stride combination has no valid tiling."""


class InvalidConfig(PanodiffError):
    """Experiment or sampler configuration is inconsistent."""


class FixtureExhausted(PanodiffError):
    """A replay fixture or fixed shift sequence has no entry for this call."""


class FixtureDiverged(PanodiffError):
    """Replay input digest differs from the recorded one."""


class NumericalFailure(PanodiffError):
    """A linear-algebra solve failed (matrix not PD after jitter)."""


class CalibrationFailed(PanodiffError):
    """Seam thresholds cannot be separated; the toy prior carries no seam signal."""


class ProtocolError(PanodiffError):
    """External denoiser protocol violation or transport failure."""


class ProtocolTimeout(ProtocolError):
    """External denoiser did not answer within the deadline."""
