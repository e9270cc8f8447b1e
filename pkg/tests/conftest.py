import numpy as np
import pytest

from capgp.data import synth as sd
from capgp.models import gpr


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: synthetic experiments that fit several models")


@pytest.fixture
def rng():
    return np.random.default_rng(0)


@pytest.fixture
def noiseless_cfg():
    return sd.SynthConfig(noise_std_ah=0.0)


@pytest.fixture
def synth_ds():
    return sd.synth_matrix(sd.SynthConfig())


@pytest.fixture
def fast_fit():
    return gpr.FitConfig(restarts=2, max_iters=60, seed=0)
