import numpy as np
import pytest

from panodiff.denoisers import AnalyticDenoiser, GaussianMRFPrior
from panodiff.schedule import NoiseSchedule


@pytest.fixture(scope="session")
def schedule50():
    return NoiseSchedule.linear(50)


@pytest.fixture(scope="session")
def prior256(schedule50):
    return GaussianMRFPrior(256)


@pytest.fixture(scope="session")
def analytic256(prior256, schedule50):
    return AnalyticDenoiser(prior256, schedule50)


def random_panorama(rng, height=3, width=16, channels=2):
    from panodiff.grid import PanoramaLatent

    return PanoramaLatent(rng.standard_normal((height, width, channels)))


def pytest_configure(config):
    np.seterr(all="raise", under="ignore")
