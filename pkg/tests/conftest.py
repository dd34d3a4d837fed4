import numpy as np
import pytest

from wignerlab.measures import TwoPoint, Uniform


@pytest.fixture
def two_point():
    return TwoPoint(0.5)


@pytest.fixture
def uniform():
    return Uniform(0.5)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)
