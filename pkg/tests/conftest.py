import os
import warnings

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from gwpk.field import GridSpec
from gwpk.tf import Window

settings.register_profile("default", deadline=None, max_examples=30,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


@pytest.fixture(scope="session")
def grid():
    return GridSpec(512, 28.0)


@pytest.fixture(scope="session")
def big_grid():
    return GridSpec(1024, 40.0)


@pytest.fixture(scope="session")
def window(grid):
    return Window.gaussian(grid)


@pytest.fixture(scope="session")
def big_window(big_grid):
    return Window.gaussian(big_grid)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(autouse=True)
def _quiet_noise_warnings():
    with warnings.catch_warnings():
        warnings.filterwarnings("ignore", message=".*spectral noise floor.*")
        yield
