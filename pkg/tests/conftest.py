import os
import sys

import numpy as np
import pytest

sys.path.insert(0, os.path.dirname(__file__))


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: long-running experiment-scale test")
    config.addinivalue_line("markers", "acceptance: exit criterion")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
