import math

import numpy as np
import pytest

from hero import lie, simworld
from hero.estimator import MeasurementBatch, SolverOptions, WindowState, solve_window
from hero.prior import prior_error

QC = (0.04, 0.01, 0.0, 0.0, 0.0, 0.002)


def test_trajectory_is_planar_and_reproducible():
    a = simworld.generate_trajectory(5, 40, 0.25, QC, 2.0, 0.1)
    b = simworld.generate_trajectory(5, 40, 0.25, QC, 2.0, 0.1)
    assert np.array_equal(a.poses, b.poses) and np.array_equal(a.velocities, b.velocities)
    assert np.allclose(a.poses[:, 2, 3], 0.0) and np.allclose(a.poses[:, 2, :2], 0.0)
    assert np.allclose(a.velocities[:, [2, 3, 4]], 0.0)
    assert all(lie.is_valid_pose(T) for T in a.poses)
    with pytest.raises(ValueError):
        simworld.generate_trajectory(0, 1, 0.25, QC)


def test_noise_free_limit_is_constant_velocity():
    gt = simworld.generate_trajectory(0, 30, 0.25, np.zeros(6), 3.0, 0.2)
    assert np.allclose(gt.velocities, gt.velocities[0])
    for k in range(29):
        e = prior_error(gt.state_pose(k), gt.velocities[k], gt.state_pose(k + 1), gt.velocities[k + 1], 0.25)
        assert np.linalg.norm(e) < 1e-8
    # forward motion along +x of the sensor
    assert gt.poses[1][0, 3] > 0


def test_velocity_increment_variance():
    dt = 0.5
    q = np.array([0.3, 0.2, 0.0, 0.0, 0.0, 0.05])
    gt = simworld.generate_trajectory(11, 10_001, dt, q, 0.0, 0.0)
    dv = np.diff(gt.velocities, axis=0)
    emp = dv.var(axis=0)
    for i in (0, 1, 5):
        assert emp[i] == pytest.approx(dt * q[i], rel=0.05)


def test_render_single_landmark_ahead():
    world = simworld.World(np.array([[10.0, 0.0]]), np.array([1.0]), (-20, 20, -20, 20), 0)
    sensor = simworld.SensorParams(speckle=0.0)
    s = simworld.render_scan(world, np.eye(4), sensor)
    a, b = np.unravel_index(np.argmax(s.intensities), s.intensities.shape)
    assert abs(b - 10.0 / sensor.range_resolution) <= 1 and min(a, sensor.n_azimuths - a) <= 1
    assert s.intensities.max() == pytest.approx(1.0)


def test_render_out_of_range_and_speckle_only():
    sensor = simworld.SensorParams()
    far = simworld.World(np.array([[sensor.max_range + 5.0, 0.0]]), np.array([1.0]), (0, 100, -1, 1), 0)
    s = simworld.render_scan(far, np.eye(4), sensor, np.random.default_rng(0))
    assert s.intensities.max() <= sensor.speckle
    assert s.intensities.mean() == pytest.approx(sensor.speckle / 2, rel=0.02)
    assert np.all(s.intensities >= 0)


def test_render_equivariance(rng):
    world = simworld.make_world(3, 30, (-40, 40, -40, 40))
    sensor = simworld.SensorParams(speckle=0.0)
    P = lie.planar_pose(3.0, -2.0, 0.7)
    moved = simworld.World(simworld.landmarks_in_sensor(world, P), world.reflectivity, world.extent, 0)
    a = simworld.render_scan(world, P, sensor).intensities
    b = simworld.render_scan(moved, np.eye(4), sensor).intensities
    assert np.max(np.abs(a - b)) < 1e-9


def test_oracle_correspondences_examples(rng):
    world = simworld.make_world(1, 20, (-30, 30, -30, 30))
    z, r, W = simworld.oracle_correspondences(world, np.eye(4), np.eye(4))
    assert np.array_equal(z, r) and len(z) == 20
    A, B = lie.planar_pose(1.0, 2.0, 0.3), lie.planar_pose(2.5, 1.0, 0.1)
    z, r, _ = simworld.oracle_correspondences(world, A, B)
    T_ba = lie.inverse(B) @ A
    assert np.max(np.abs(z - (T_ba @ r.T).T)) < 1e-12
    _, _, W = simworld.oracle_correspondences(world, A, B, 0.05, rng)
    assert np.allclose(W[0], np.diag([400.0, 400.0, 1e4]))


def test_oracle_noise_gives_accurate_pose(rng):
    world = simworld.make_world(2, 50, (-40, 40, -40, 40))
    B = lie.planar_pose(0.5, 0.05, 0.02)
    errs = []
    for _ in range(10):
        z, r, W = simworld.oracle_correspondences(world, np.eye(4), B, 0.05, rng)
        state = WindowState([np.eye(4), np.eye(4)], np.zeros((2, 6)), [0.0, 0.25])
        post = solve_window(state, [MeasurementBatch(1, z, r, W)], opts=SolverOptions(robust=False))
        errs.append(np.linalg.norm((post.mean.poses[1] @ B)[:2, 3]))
    assert np.mean(errs) < 0.02


def test_simulate_sequence_shapes():
    seq = simworld.simulate_sequence(0, 5, 0.25, 10)
    assert len(seq.scans) == 5 and len(seq.groundtruth) == 5
    assert seq.scans[3].timestamp == 0.75
    again = simworld.simulate_sequence(0, 5, 0.25, 10)
    assert np.array_equal(seq.scans[4].intensities, again.scans[4].intensities)
