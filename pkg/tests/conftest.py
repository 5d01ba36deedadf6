import numpy as np
import pytest
from hypothesis import settings

from cnn_recover.model import ProblemConfig, make_ground_truth

settings.register_profile("repo", max_examples=40, deadline=None)
settings.load_profile("repo")


@pytest.fixture(scope="session")
def wstar():
    """The standard planted weights: k=5, t=2, kappa=2."""
    return make_ground_truth(5, 2, 2.0, seed=0)


@pytest.fixture
def cfg_factory():
    def make(act="squared_relu", k=5, r=2, t=2, seed=0):
        return ProblemConfig(k=k, r=r, t=t, activation=act, seed=seed)
    return make


def orthonormal(k, t, seed=0):
    q, _ = np.linalg.qr(np.random.default_rng(seed).standard_normal((k, t)))
    return q
