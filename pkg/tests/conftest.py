import numpy as np
import pytest


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def rand_f32(rng, *shape, scale=1.0):
    return (rng.standard_normal(shape) * scale).astype(np.float32)
