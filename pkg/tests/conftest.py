import numpy as np
import pytest

from twolevel_lpbf import geometry


@pytest.fixture
def cube():
    return geometry.TriangleSoup(geometry.box_triangles((0, 0, 0), (1, 1, 1)))


@pytest.fixture(scope="session")
def cylinder():
    return geometry.TriangleSoup(geometry.cylinder_triangles(5.0, 20.0, 64))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
