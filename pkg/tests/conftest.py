import numpy as np
import pytest

from estimation.dq_algebra import pose_from_parts, random_unit_quaternion
from estimation.fleet_graph import running_example

FD_STEP = 1e-6


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def make_pose(rng, scale=10.0):
    return pose_from_parts(random_unit_quaternion(rng), scale * rng.standard_normal(3))


@pytest.fixture
def random_pose(rng):
    return make_pose(rng)


@pytest.fixture
def fleet():
    return running_example()


@pytest.fixture
def fleet_poses(rng, fleet):
    return {i: make_pose(rng) for i in fleet.nodes}


def central_difference(f, x, step=FD_STEP):
    """Jacobian of ``f`` at ``x`` by central differences."""
    x = np.asarray(x, dtype=float)
    columns = []
    for j in range(x.size):
        e = np.zeros_like(x)
        e[j] = step
        columns.append((np.asarray(f(x + e)) - np.asarray(f(x - e))) / (2.0 * step))
    return np.column_stack(columns)
