import math

import numpy as np
import pytest

from hero import evaluation, lie
from hero.errors import TooShort
from hero.evaluation import Trajectory, kitti_drift


def straight(n, step, scale=1.0):
    return Trajectory(np.arange(n) * 0.1, [lie.planar_pose(scale * step * k, 0.0, 0.0) for k in range(n)])


def wiggly(rng, n=200):
    x = y = yaw = 0.0
    poses = []
    for _ in range(n):
        poses.append(lie.planar_pose(x, y, yaw))
        yaw += rng.normal(0, 0.05)
        x += 0.8 * math.cos(yaw)
        y += 0.8 * math.sin(yaw)
    return Trajectory(np.arange(n) * 0.25, poses)


def perturb(traj, rng, s=0.02):
    P = [p @ lie.exp_map(rng.normal(0, s, 6) * [1, 1, 0, 0, 0, 1]) for p in traj.poses]
    return Trajectory(traj.timestamps, P)


def brute_force(est, gt, lengths):
    """Independent oracle: explicit loops and np.linalg.inv."""
    G, E = gt.poses, est.poses
    dist = [0.0]
    for k in range(1, len(G)):
        dist.append(dist[-1] + math.dist(G[k][:3, 3], G[k - 1][:3, 3]))
    terrs, rerrs = [], []
    for i in range(len(G)):
        for L in lengths:
            j = next((k for k in range(i, len(G)) if dist[k] - dist[i] >= L - 1e-9), None)
            if j is None:
                continue
            dg = np.linalg.inv(G[i]) @ G[j]
            de = np.linalg.inv(E[i]) @ E[j]
            err = np.linalg.inv(dg) @ de
            terrs.append(np.linalg.norm(err[:3, 3]) / L)
            c = (np.trace(err[:3, :3]) - 1) / 2
            rerrs.append(math.acos(min(1.0, max(-1.0, c))) / L)
    return 100 * np.mean(terrs), 1e3 * math.degrees(np.mean(rerrs))


def test_straight_line_one_percent_scale():
    gt = straight(1000, 1.0)
    est = straight(1000, 1.0, 1.01)
    rep = kitti_drift(est, gt)
    assert abs(rep.translational_error - 1.0) < 1e-6
    assert rep.rotational_error == 0.0


def test_perfect_estimate_is_zero(rng):
    gt = wiggly(rng)
    rep = kitti_drift(gt, gt, evaluation.SCALED_LENGTHS)
    assert rep.translational_error < 1e-12
    assert rep.rotational_error < 1e-4  # arccos near 1 resolves only ~1e-8 rad


def test_matches_brute_force_enumerator(rng):
    for _ in range(3):
        gt = wiggly(rng)
        est = perturb(gt, rng)
        rep = kitti_drift(est, gt, evaluation.SCALED_LENGTHS)
        t, r = brute_force(est, gt, evaluation.SCALED_LENGTHS)
        assert abs(rep.translational_error - t) < 1e-10
        assert abs(rep.rotational_error - r) < 1e-10


def test_invariant_to_rigid_transform_of_estimate(rng):
    gt = wiggly(rng)
    est = perturb(gt, rng)
    A = lie.planar_pose(30.0, -5.0, 1.1)
    moved = Trajectory(est.timestamps, [A @ p for p in est.poses])
    a = kitti_drift(est, gt, evaluation.SCALED_LENGTHS)
    b = kitti_drift(moved, gt, evaluation.SCALED_LENGTHS)
    assert abs(a.translational_error - b.translational_error) < 1e-9


def test_too_short_and_per_length():
    with pytest.raises(TooShort):
        kitti_drift(straight(50, 1.0), straight(50, 1.0))
    rep = kitti_drift(straight(200, 1.0, 1.02), straight(200, 1.0), (10, 20))
    assert set(rep.per_length) == {10, 20}
    assert rep.per_length[10][2] == 190
    assert rep.per_length[20][0] == pytest.approx(2.0)


def test_parse_lengths():
    assert evaluation.parse_lengths("10:80:10") == (10, 20, 30, 40, 50, 60, 70, 80)
    assert evaluation.parse_lengths("100,200") == (100, 200)
    with pytest.raises(ValueError):
        evaluation.parse_lengths("0:10:5")


def test_trajectory_file_round_trip(tmp_path, rng):
    t = perturb(wiggly(rng, 10), rng)
    p = tmp_path / "est.txt"
    evaluation.write_trajectory(p, t)
    lines = p.read_text().splitlines()
    assert len(lines) == 10 and len(lines[0].split()) == 13
    assert lines[0].split()[0] == "0.000000000e+00"
    back = evaluation.read_trajectory(p)
    assert np.allclose(back.poses, t.poses, rtol=1e-9, atol=1e-12)


def test_groundtruth_round_trip(tmp_path):
    from hero import simworld
    gt = simworld.generate_trajectory(1, 20, 0.25, (0.01, 0.01, 0, 0, 0, 0.001), 2.0, 0.1)
    p = tmp_path / "groundtruth.csv"
    evaluation.write_groundtruth(p, gt)
    assert p.read_text().splitlines()[0] == "timestamp,x,y,yaw,vx,vy,vyaw"
    traj, vel = evaluation.read_groundtruth(p)
    assert np.allclose(traj.poses, gt.poses, atol=1e-8)
    assert np.allclose(vel[:, 0], -gt.velocities[:, 0])
    assert vel[0, 0] == pytest.approx(2.0)


def test_association_tolerates_missing_frames(rng):
    gt = wiggly(rng, 100)
    keep = np.ones(100, bool)
    keep[[10, 11, 50]] = False
    est = Trajectory(gt.timestamps[keep] + 0.01, gt.poses[keep])
    ie, ig = evaluation.associate(est, gt)
    assert len(ie) == 97 and not np.isin([10, 11, 50], ig).any()
