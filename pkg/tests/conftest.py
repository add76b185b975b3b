import os

import hypothesis
import numpy as np
import pytest

from fairps.losses import LossSpec
from fairps.population import GroupDistribution, make_population

hypothesis.settings.register_profile("default", deadline=None, derandomize=True)
hypothesis.settings.register_profile("fast", deadline=None, max_examples=20)
hypothesis.settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


def point_population(points, fractions, labels=None):
    """Point-mass groups at the given scalar locations."""
    labels = points if labels is None else labels
    groups = [GroupDistribution.point_mass(s, [float(x)], float(y)) for s, (x, y) in enumerate(zip(points, labels))]
    return make_population(groups, fractions)


@pytest.fixture
def example1_pop():
    return point_population([1.0, 0.0], [0.7, 0.3])


@pytest.fixture
def example3_pop():
    return point_population([1.0, 2.0], [0.5, 0.5], labels=[-1.0, 1.0])


@pytest.fixture
def mean_loss():
    return LossSpec("scalar_mean_squared", gamma=2.0, beta=2.0, loss_sup=1.0)


@pytest.fixture
def sq_loss():
    return LossSpec("squared_error", gamma=2.0, beta=8.0, loss_sup=25.0)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
