import numpy as np
import pytest

from latentlab import Codec, Field, GaussianPrior, MixtureScoreModel, make_schedule


@pytest.fixture
def rng():
    return np.random.Generator(np.random.Philox(1234))


@pytest.fixture
def sched():
    return make_schedule("scaled_linear", 1000, 8.5e-4, 1.2e-2)


@pytest.fixture
def unit_model():
    """Standard-normal prior on 1x4x4 fields."""
    return MixtureScoreModel([GaussianPrior(Field.zeros(1, 4, 4), 1.0)], labels=["x"])


@pytest.fixture
def identity_codec():
    return Codec("identity")


def rand_field(rng, c=1, h=4, w=4, scale=1.0):
    return Field(scale * rng.standard_normal((c, h, w)))
