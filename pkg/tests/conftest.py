import numpy as np
import pytest

from imdd_snn.signal_chain import LinkParams, make_dataset


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: long-running end-to-end checks")
    config.addinivalue_line("markers", "sweep: needs the full noise-sweep results")


@pytest.fixture(scope="session")
def params():
    return LinkParams()


@pytest.fixture(scope="session")
def train_m6(params):
    """Training split at -6 dB, chunked with 7 taps."""
    return make_dataset(params, -6.0, "train", seed=0).chunks(7)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
