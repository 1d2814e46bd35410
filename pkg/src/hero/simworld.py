"""Synthetic planar radar world used for all desk-scale groundtruth.

Poses handed to ``render_scan`` / ``oracle_correspondences`` are
world-from-sensor transforms. ``GroundTruth`` stores the same convention plus
the body velocities ``w_k`` of ``T_{k,0} = pose_k^-1`` (so a vehicle driving
forward at speed v has ``w = (-v, 0, 0, 0, 0, 0)``).
"""
import math
from dataclasses import dataclass

import numpy as np

from . import kernels, lie
from .scan import PolarScan

PLANAR_DIMS = (0, 1, 5)


@dataclass
class SensorParams:
    n_azimuths: int = 128
    n_bins: int = 256
    range_resolution: float = 0.25
    sigma_bins: float = 1.5
    sigma_azimuth_steps: float = 1.0
    speckle: float = 0.05
    peak: float = 1.0

    @property
    def max_range(self):
        return (self.n_bins - 1) * self.range_resolution

    @property
    def azimuths(self):
        return np.arange(self.n_azimuths) * (2.0 * math.pi / self.n_azimuths)


@dataclass
class World:
    landmarks: np.ndarray     # (M, 2) m
    reflectivity: np.ndarray  # (M,)
    extent: tuple             # (xmin, xmax, ymin, ymax)
    seed: int = 0

    def __post_init__(self):
        self.landmarks = np.asarray(self.landmarks, dtype=float).reshape(-1, 2)
        self.reflectivity = np.asarray(self.reflectivity, dtype=float)


@dataclass
class GroundTruth:
    timestamps: np.ndarray
    poses: np.ndarray       # (n, 4, 4) world-from-sensor
    velocities: np.ndarray  # (n, 6) body velocities of T_{k,0}

    def __len__(self):
        return len(self.timestamps)

    def state_pose(self, k):
        """``T_{k,0}`` relative to the first frame."""
        return lie.inverse(self.poses[k]) @ self.poses[0]


def _increment_chol(h):
    cov = np.array([[h**3 / 3.0, h**2 / 2.0], [h**2 / 2.0, h]])
    return np.linalg.cholesky(cov)


def generate_trajectory(seed, n_frames, dt, Qc, initial_speed=2.0, initial_yaw_rate=0.0,
                        substeps=10):
    """Sample the white-noise-on-acceleration model on the plane.

    The body velocity is Brownian with diffusion ``Qc`` on (x, y, yaw) and the
    pose integrates it with ``substeps`` exponential steps per frame; noise on
    the out-of-plane dimensions is dropped.
    """
    if n_frames < 2 or dt <= 0:
        raise ValueError("need n_frames >= 2 and dt > 0")
    rng = np.random.default_rng(seed)
    q = np.diag(np.asarray(Qc, dtype=float)) if np.ndim(Qc) == 2 else np.asarray(Qc, dtype=float)
    q = np.where(np.isin(np.arange(6), PLANAR_DIMS), q, 0.0)
    h = dt / substeps
    L = _increment_chol(h)
    T = np.eye(4)  # T_{k,0}
    w = np.zeros(6)
    w[0] = -initial_speed
    w[5] = -initial_yaw_rate
    poses = [lie.inverse(T)]
    vels = [w.copy()]
    for _ in range(n_frames - 1):
        for _ in range(substeps):
            noise = rng.standard_normal((6, 2)) @ L.T * np.sqrt(q)[:, None]
            T = lie.exp_map(h * w + noise[:, 0]) @ T
            w = w + noise[:, 1]
        poses.append(lie.inverse(T))
        vels.append(w.copy())
    stamps = np.arange(n_frames) * dt
    return GroundTruth(stamps, np.array(poses), np.array(vels))


def make_world(seed, n_landmarks, extent, reflectivity=(0.5, 1.0)):
    rng = np.random.default_rng(seed)
    xmin, xmax, ymin, ymax = extent
    pts = np.column_stack([rng.uniform(xmin, xmax, n_landmarks), rng.uniform(ymin, ymax, n_landmarks)])
    return World(pts, rng.uniform(*reflectivity, n_landmarks), tuple(extent), seed)


def world_around(gt, seed, n_landmarks, margin=20.0):
    """World whose extent is the trajectory bounding box grown by ``margin``."""
    xy = gt.poses[:, :2, 3]
    lo = xy.min(axis=0) - margin
    hi = xy.max(axis=0) + margin
    return make_world(seed, n_landmarks, (lo[0], hi[0], lo[1], hi[1]))


def landmarks_in_sensor(world, pose):
    Ti = lie.inverse(pose)
    p = world.landmarks @ Ti[:2, :2].T + Ti[:2, 3]
    return p


def render_scan(world, pose, sensor=None, rng=None, timestamp=0.0):
    """Polar scan seen from world-from-sensor ``pose``."""
    sensor = sensor or SensorParams()
    rng = rng if rng is not None else np.random.default_rng(0)
    p = landmarks_in_sensor(world, pose)
    rho = np.hypot(p[:, 0], p[:, 1])
    vis = rho <= sensor.max_range
    az = np.mod(np.arctan2(p[vis, 1], p[vis, 0]), 2.0 * math.pi)
    sigma_az = sensor.sigma_azimuth_steps * 2.0 * math.pi / sensor.n_azimuths
    inten = kernels.render_blobs(sensor.azimuths, sensor.n_bins, sensor.range_resolution,
                                 az, rho[vis], world.reflectivity[vis], sensor.sigma_bins, sigma_az)
    inten += rng.uniform(0.0, sensor.speckle * sensor.peak, inten.shape)
    return PolarScan(sensor.azimuths, inten, timestamp, sensor.range_resolution)


def oracle_correspondences(world, pose_a, pose_b, noise_std=0.0, rng=None, max_range=None, c=1e4):
    """Landmarks seen from both poses: (z in frame b, r in frame a, W).

    Gaussian noise of ``noise_std`` is added independently to both point sets;
    ``W = diag(1/s^2, 1/s^2, c)`` with ``s = noise_std`` (unit weight when 0).
    """
    rng = rng if rng is not None else np.random.default_rng(0)
    pa = landmarks_in_sensor(world, pose_a)
    pb = landmarks_in_sensor(world, pose_b)
    if max_range is not None:
        vis = (np.hypot(*pa.T) <= max_range) & (np.hypot(*pb.T) <= max_range)
        pa, pb = pa[vis], pb[vis]
    n = len(pa)
    if noise_std > 0:
        pa = pa + rng.normal(0.0, noise_std, pa.shape)
        pb = pb + rng.normal(0.0, noise_std, pb.shape)
    z = np.column_stack([pb, np.zeros(n), np.ones(n)])
    r = np.column_stack([pa, np.zeros(n), np.ones(n)])
    s2 = noise_std**2 if noise_std > 0 else 1.0
    W = np.tile(np.diag([1.0 / s2, 1.0 / s2, c]), (n, 1, 1))
    return z, r, W


@dataclass
class Sequence:
    world: World
    groundtruth: GroundTruth
    scans: list
    sensor: SensorParams


def simulate_sequence(seed=0, n_frames=300, dt=0.25, n_landmarks=50, traj_qc=(0.1, 0.01, 0, 0, 0, 0.01),
                      initial_speed=2.0, initial_yaw_rate=0.0, margin=20.0, sensor=None):
    sensor = sensor or SensorParams()
    gt = generate_trajectory(seed, n_frames, dt, traj_qc, initial_speed, initial_yaw_rate)
    world = world_around(gt, seed + 1, n_landmarks, margin)
    scans = []
    for k in range(n_frames):
        rng = np.random.default_rng([seed, k])
        scans.append(render_scan(world, gt.poses[k], sensor, rng, gt.timestamps[k]))
    return Sequence(world, gt, scans, sensor)
