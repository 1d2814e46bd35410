import math

import numpy as np
import pytest
from scipy import stats

from hero import lie, scan, simworld, trainer
from hero.estimator import SolverOptions
from hero.features import Architecture, FeatureModel
from hero.features.frontend import FeatureSet, extract_window, mstep
from hero.trainer import TrainConfig

ARCH = Architecture(enc_channels=(4, 8), cell_size=16)


@pytest.fixture(scope="module")
def small_sequence():
    return simworld.simulate_sequence(seed=7, n_frames=12, dt=0.25, n_landmarks=30,
                                      traj_qc=(0.01, 0.005, 0, 0, 0, 1e-4), initial_speed=2.0,
                                      initial_yaw_rate=0.1, margin=10.0)


@pytest.fixture(scope="module")
def small_frames(small_sequence):
    return trainer.prepare_frames(small_sequence.scans, 64, 0.5, 16)


def features_with_scores(s):
    s = np.asarray(s, float)
    n = len(s)
    return FeatureSet(np.zeros((n, 4)), np.zeros((n, 3, 3)), np.zeros((n, 2)), np.arange(n), s,
                      np.zeros((n, 2)), s[:, 0] + s[:, 1])


def test_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(window_size=1)
    with pytest.raises(ValueError):
        TrainConfig(alpha=0.0)
    c = TrainConfig()
    assert (c.alpha, c.eta, c.aug_max_angle, c.window_size, c.learning_rate) == (16.0, 4.0, 0.26, 4, 1e-5)


def test_inference_filter_examples(rng):
    assert len(trainer.inference_filter(features_with_scores([[3, 3, 0]] * 5), 4.0)) == 5
    assert len(trainer.inference_filter(features_with_scores([[1, 1, 0]] * 5), 4.0)) == 0
    s = rng.normal(2.0, 2.0, (500, 3))
    kept = trainer.inference_filter(features_with_scores(s), 4.0)
    expected = [i for i in range(500) if s[i, 0] + s[i, 1] >= 4.0]
    assert list(kept.cell_ids) == expected


def test_adam_matches_reference():
    st = trainer.OptimizerState.zeros(2)
    theta = np.array([1.0, -1.0])
    g = np.array([0.5, -2.0])
    out = trainer.adam_update(theta, g, st, 0.1)
    # first step: mhat = g, vhat = g^2
    assert np.allclose(out, theta - 0.1 * g / (np.abs(g) + 1e-8))
    assert st.step == 1


def test_augment_rotation_properties(rng):
    yy, xx = np.mgrid[0:64, 0:64]
    smooth = np.exp(-((xx - 40) ** 2 + (yy - 30) ** 2) / 60.0)
    img = scan.CartesianImage(smooth, smooth > 0.2, 0.5, 0.0)
    same, a = trainer.augment_rotation(img, 0.0, rng)
    assert a == 0.0 and same.pixels is img.pixels
    rot, a = trainer.augment_rotation(img, 0.26, rng)
    back = scan.rotate_image(rot.pixels, -a)
    inner = slice(16, 48)
    mse = np.mean((back[inner, inner] - smooth[inner, inner]) ** 2)
    assert 10 * math.log10(1.0 / mse) > 30
    assert rot.mask.dtype == bool
    with pytest.raises(ValueError):
        trainer.augment_rotation(img, -0.1, rng)


def test_augmentation_angles_uniform():
    rng = np.random.default_rng(5)
    img = scan.CartesianImage(np.zeros((8, 8)), np.zeros((8, 8), bool), 0.5, 0.0)
    angles = np.array([trainer.augment_rotation(img, 0.26, rng)[1] for _ in range(10_000)])
    assert np.all(np.abs(angles) <= 0.26)
    assert stats.kstest(angles, stats.uniform(loc=-0.26, scale=0.52).cdf).pvalue > 0.01


def test_mahalanobis_gate_gives_zero_gradient(small_frames):
    model = FeatureModel(ARCH, seed=1)
    win = small_frames[:4]
    wf = extract_window(model, np.array([f.image.pixels for f in win]), [f.valid_cells for f in win], 0.5)
    far = lie.planar_pose(500.0, 0.0, 0.0)  # every error is enormous
    res = mstep(model, wf, [np.eye(4)] + [far] * 3, alpha=16.0, gate=True)
    assert res.inliers == 0 and res.total > 0
    assert np.array_equal(res.grad, np.zeros(model.n_params)) and res.loss == 0.0
    res = mstep(model, wf, [np.eye(4)] + [far] * 3, alpha=16.0, gate=False)
    assert np.any(res.grad != 0)


def test_zero_learning_rate_leaves_theta_bitwise(small_frames):
    model = FeatureModel(ARCH, seed=1)
    before = model.theta.copy()
    cfg = TrainConfig(learning_rate=0.0)
    m = trainer.train_step(model, small_frames[:4], cfg, trainer.OptimizerState.zeros(model.n_params),
                           np.random.default_rng(0))
    assert not m.skipped
    assert np.array_equal(model.theta, before)


def test_train_step_rejects_bad_windows(small_frames):
    model = FeatureModel(ARCH, seed=1)
    opt = trainer.OptimizerState.zeros(model.n_params)
    with pytest.raises(ValueError):
        trainer.train_step(model, small_frames[:3], TrainConfig(), opt)
    with pytest.raises(ValueError):
        trainer.train_step(model, small_frames[:4][::-1], TrainConfig(), opt)


def test_train_writes_log_and_checkpoints(tmp_path, small_frames):
    model = FeatureModel(ARCH, seed=1)
    cfg = TrainConfig(learning_rate=1e-3, max_iterations=4, checkpoint_every=2)
    log = tmp_path / "train.csv"
    hist = trainer.train(model, small_frames, cfg, log, tmp_path / "model.herm")
    rows = log.read_text().splitlines()
    assert rows[0] == "step,loss,inliers,grad_norm,wall_ms" and len(rows) == 5
    assert len(hist) == 4
    for name in ("model_000002.herm", "model_000004.herm", "model.herm"):
        assert (tmp_path / name).exists()


def oracle_factors(world, gt, noise=0.0):
    def f(ref, k):
        z, r, W = simworld.oracle_correspondences(world, gt.poses[ref], gt.poses[k], noise,
                                                  np.random.default_rng([ref, k]))
        return z, r, W
    return f


def test_odometry_stationary_sequence():
    gt = simworld.generate_trajectory(0, 10, 0.25, np.zeros(6), 0.0, 0.0)
    world = simworld.make_world(0, 20, (-30, 30, -30, 30))
    poses, vels, failed = trainer.sliding_window(gt.timestamps, oracle_factors(world, gt), 4)
    assert not failed.any()
    for P in poses:
        assert np.linalg.norm(P[:3, 3]) < 1e-6


def test_odometry_constant_velocity_sequence():
    gt = simworld.generate_trajectory(0, 12, 0.25, np.zeros(6), 3.0, 0.2)
    world = simworld.world_around(gt, 1, 40, 20.0)
    poses, vels, failed = trainer.sliding_window(gt.timestamps, oracle_factors(world, gt), 4)
    assert not failed.any()
    for k in range(12):
        assert np.allclose(poses[k], gt.state_pose(k), atol=1e-6)
    rel = np.abs(vels[1:, [0, 5]] - gt.velocities[1:, [0, 5]]) / np.abs(gt.velocities[1:, [0, 5]])
    assert rel.max() < 0.01


def test_oracle_odometry_matches_sliding_window():
    gt = simworld.generate_trajectory(2, 10, 0.25, (0.01, 0.005, 0, 0, 0, 1e-4), 2.0, 0.1)
    world = simworld.world_around(gt, 3, 30, 20.0)
    # tiny noise means very confident factors, so the prior barely bends the solution
    traj = trainer.run_oracle_odometry(world, gt, TrainConfig(), noise_std=1e-4)
    assert not traj.flags.any()
    assert np.allclose(traj.poses, gt.poses, atol=1e-3)


def test_run_odometry_is_deterministic(small_sequence, small_frames):
    model = FeatureModel(ARCH, seed=2)
    cfg = TrainConfig(use_eta_filter=False)
    a = trainer.run_odometry(model, small_frames, cfg)
    b = trainer.run_odometry(model, small_sequence.scans, cfg, size=64, resolution=0.5)
    assert np.array_equal(a.poses, b.poses) and np.array_equal(a.flags, b.flags)
    assert len(a) == 12 and np.array_equal(a.poses[0], np.eye(4))


def test_empty_frames_are_dead_reckoned():
    stamps = np.arange(6) * 0.25
    poses, _, failed = trainer.sliding_window(stamps, lambda ref, k: None, 4)
    assert failed[3:].all()
    assert all(np.allclose(P, np.eye(4)) for P in poses)


@pytest.mark.slow
def test_training_reduces_loss_on_small_world():
    seq = simworld.simulate_sequence(seed=0, n_frames=40, dt=0.25, n_landmarks=5,
                                     traj_qc=(0.01, 0.005, 0, 0, 0, 1e-4), initial_speed=1.0,
                                     initial_yaw_rate=0.05, margin=5.0)
    frames = trainer.prepare_frames(seq.scans, 64, 0.5, 16)
    model = FeatureModel(ARCH, seed=0)
    cfg = TrainConfig(learning_rate=1e-3, max_iterations=200, seed=0)
    hist = trainer.train(model, frames, cfg)
    loss = np.array([h.loss for h in hist])
    loss = np.where(np.isfinite(loss), loss, np.nan)
    early = np.nanmean(loss[:20])
    late = np.nanmean(loss[-20:])
    assert early - late >= 0.2 * abs(early)


def test_prior_only_window_has_zero_gradient(small_frames):
    model = FeatureModel(ARCH, seed=1)
    win = small_frames[:4]
    none_valid = [np.zeros_like(f.valid_cells) for f in win]
    wf = extract_window(model, np.array([f.image.pixels for f in win]), none_valid, 0.5)
    res = mstep(model, wf, [np.eye(4)] * 4)
    assert res.total == 0 and np.array_equal(res.grad, np.zeros(model.n_params))


def test_lower_alpha_never_grows_inlier_set(small_frames):
    model = FeatureModel(ARCH, seed=1)
    win = small_frames[:4]
    wf = extract_window(model, np.array([f.image.pixels for f in win]), [f.valid_cells for f in win], 0.5)
    rel = [lie.planar_pose(-0.5 * k, 0.0, 0.0) for k in range(4)]
    counts = [mstep(model, wf, rel, alpha=a).inliers for a in (1e6, 100.0, 16.0, 4.0, 1.0, 1e-3)]
    assert counts == sorted(counts, reverse=True)
