import numpy as np
import pytest

from hero import lie


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def random_twist(rng, max_angle=np.pi - 0.1, scale=2.0):
    u = rng.normal(0.0, scale, 3)
    axis = rng.normal(size=3)
    axis /= np.linalg.norm(axis)
    return np.concatenate([u, axis * rng.uniform(0.0, max_angle)])


def random_planar_pose(rng, spread=5.0, max_yaw=1.0):
    return lie.planar_pose(*rng.uniform(-spread, spread, 2), rng.uniform(-max_yaw, max_yaw))


def numeric_jacobian(f, x, h=1e-6):
    x = np.asarray(x, dtype=float)
    f0 = np.asarray(f(x))
    J = np.zeros((f0.size, x.size))
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = h
        J[:, i] = (np.asarray(f(x + e)) - np.asarray(f(x - e))).ravel() / (2 * h)
    return J


def pytest_terminal_summary(terminalreporter):
    import sys
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
