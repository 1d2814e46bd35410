"""Unsupervised training loop and sliding-window odometry.

A training step on one window alternates an E-step (robust Gauss-Newton over
the window's poses and velocities, network outputs frozen) with an M-step
(gradient of the gated measurement loss at the posterior mean, one Adam
update). Nothing here reads groundtruth.
"""
import csv
import logging
import math
import os
import time
from dataclasses import dataclass, field

import numpy as np

from . import lie, scan
from .errors import SingularSystem, SolverDiverged
from .estimator import MeasurementBatch, SolverOptions, WindowState, extrapolate, solve_window
from .evaluation import Trajectory
from .features import matching
from .features.checkpoint import save_checkpoint
from .features.frontend import DEFAULT_C, extract_window, frame_features, mstep
from .features.network import forward
from .prior import PriorConfig

log = logging.getLogger(__name__)

LOG_HEADER = ["step", "loss", "inliers", "grad_norm", "wall_ms"]


@dataclass
class TrainConfig:
    window_size: int = 4
    learning_rate: float = 1e-5
    max_iterations: int = 2000
    alpha: float = 16.0
    eta: float = 4.0
    aug_max_angle: float = 0.26
    seed: int = 0
    scalar_weight: bool = False
    no_mah_gate: bool = False
    no_masking: bool = False
    no_augmentation: bool = False
    use_eta_filter: bool = True
    checkpoint_every: int = 0
    c: float = DEFAULT_C
    min_valid_ratio: float = 0.05
    beta: float = 3.0
    prior: PriorConfig = field(default_factory=PriorConfig)
    solver: SolverOptions = field(default_factory=SolverOptions)

    def __post_init__(self):
        if self.window_size < 2:
            raise ValueError("window_size must be at least 2")
        if self.alpha <= 0:
            raise ValueError("alpha must be positive")
        if self.learning_rate < 0:
            raise ValueError("learning rate must be non-negative")
        if self.aug_max_angle < 0:
            raise ValueError("aug_max_angle must be non-negative")


@dataclass
class OptimizerState:
    m: np.ndarray
    v: np.ndarray
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros(cls, n):
        return cls(np.zeros(n), np.zeros(n))


def adam_update(theta, grad, state, lr):
    state.step += 1
    state.m = state.beta1 * state.m + (1 - state.beta1) * grad
    state.v = state.beta2 * state.v + (1 - state.beta2) * grad * grad
    mhat = state.m / (1 - state.beta1 ** state.step)
    vhat = state.v / (1 - state.beta2 ** state.step)
    return theta - lr * mhat / (np.sqrt(vhat) + state.eps)


# ----------------------------------------------------------------- data prep

@dataclass
class Frame:
    image: scan.CartesianImage
    valid_cells: np.ndarray  # cell grid, or None for all cells

    @property
    def timestamp(self):
        return self.image.timestamp


def prepare_frames(scans, size, resolution, cell_size, beta=3.0, min_valid_ratio=0.05, masking=True):
    frames = []
    for s in scans:
        img = scan.polar_to_cartesian(s, size, resolution, beta)
        valid = scan.cell_validity(img.mask, cell_size, min_valid_ratio) if masking else None
        frames.append(Frame(img, valid))
    return frames


def augment_rotation(scan_image, max_angle, rng):
    """Rotate a CartesianImage by ``Uniform(-max_angle, max_angle)`` about its centre.

    Pixels are resampled bilinearly, the mask with nearest neighbour.
    Returns ``(rotated image, angle)``.
    """
    if max_angle < 0:
        raise ValueError("max_angle must be non-negative")
    angle = float(rng.uniform(-max_angle, max_angle)) if max_angle > 0 else 0.0
    if angle == 0.0:
        return scan_image, 0.0
    return scan.CartesianImage(scan.rotate_image(scan_image.pixels, angle),
                               scan.rotate_image(scan_image.mask, angle, nearest=True),
                               scan_image.resolution, scan_image.timestamp), angle


def inference_filter(features, eta):
    """Keep keypoints with ``log|R| >= eta``, in their original order."""
    return features.subset(np.flatnonzero(features.log_det_r >= eta))


# ------------------------------------------------------------------ training

@dataclass
class StepMetrics:
    loss: float
    inliers: int
    total: int
    grad_norm: float
    pose_change: float
    skipped: bool = False
    angle: float = 0.0


def _window_batches(wf):
    out = []
    for k in range(1, len(wf.frames)):
        ms = wf.matches[k]
        if ms is None:
            continue
        f = wf.frames[k]
        out.append(MeasurementBatch(k, f.keypoints, ms.points, f.weights))
    return out


def train_step(model, window, config, opt_state, rng=None):
    """One GEM iteration on a window of Frames. Updates ``model`` in place.

    On solver failure the window is skipped: parameters and batch-norm
    buffers are left as they were.
    """
    rng = rng if rng is not None else np.random.default_rng(config.seed)
    stamps = np.array([f.timestamp for f in window])
    if len(window) != config.window_size:
        raise ValueError(f"window has {len(window)} frames, expected {config.window_size}")
    if np.any(np.diff(stamps) <= 0):
        raise ValueError("window timestamps must be strictly increasing")
    images, valid = [], []
    angle = 0.0
    if not config.no_augmentation and config.aug_max_angle > 0:
        angle = float(rng.uniform(-config.aug_max_angle, config.aug_max_angle))
    cell = model.arch.cell_size
    for f in window:
        img = f.image
        if angle:
            img = scan.CartesianImage(scan.rotate_image(img.pixels, angle),
                                      scan.rotate_image(img.mask, angle, nearest=True),
                                      img.resolution, img.timestamp)
        images.append(img.pixels)
        if f.valid_cells is None:
            valid.append(None)
        else:
            valid.append(scan.cell_validity(img.mask, cell, config.min_valid_ratio))
    res = window[0].image.resolution
    saved_buffers = model.buffers.copy()
    wf = extract_window(model, np.array(images), valid, res, training=True, update_stats=True, c=config.c)
    w = config.window_size
    state = WindowState([np.eye(4)] * w, np.zeros((w, 6)), stamps)
    try:
        post = solve_window(state, _window_batches(wf), config.prior, config.solver)
    except (SolverDiverged, SingularSystem) as exc:
        log.info("window skipped: %s", exc)
        model.buffers[:] = saved_buffers
        return StepMetrics(math.nan, 0, 0, 0.0, 0.0, True, angle)
    rel = [post.mean.relative(k) for k in range(w)]
    res_m = mstep(model, wf, rel, config.alpha, gate=not config.no_mah_gate, c=config.c)
    if not np.all(np.isfinite(res_m.grad)):
        model.buffers[:] = saved_buffers
        return StepMetrics(math.nan, res_m.inliers, res_m.total, math.inf, 0.0, True, angle)
    model.theta = adam_update(model.theta, res_m.grad, opt_state, config.learning_rate)
    change = float(np.linalg.norm(lie.log_map(rel[-1])))
    return StepMetrics(res_m.loss, res_m.inliers, res_m.total, float(np.linalg.norm(res_m.grad)), change,
                       False, angle)


def train(model, frames, config, log_path=None, checkpoint_path=None, progress=None):
    """Run ``config.max_iterations`` steps on windows drawn uniformly at random."""
    w = config.window_size
    if len(frames) < w:
        raise ValueError(f"need at least {w} frames")
    rng = np.random.default_rng(config.seed)
    opt = OptimizerState.zeros(model.n_params)
    history = []
    fh = writer = None
    if log_path:
        fresh = not os.path.exists(log_path) or os.path.getsize(log_path) == 0
        fh = open(log_path, "a", newline="")
        writer = csv.writer(fh)
        if fresh:
            writer.writerow(LOG_HEADER)
    try:
        for step in range(1, config.max_iterations + 1):
            t0 = time.perf_counter()
            start = int(rng.integers(0, len(frames) - w + 1))
            m = train_step(model, frames[start:start + w], config, opt, rng)
            ms = 1e3 * (time.perf_counter() - t0)
            history.append(m)
            if writer:
                writer.writerow([step, f"{m.loss:.6g}", m.inliers, f"{m.grad_norm:.6g}", f"{ms:.1f}"])
                fh.flush()
            if checkpoint_path and config.checkpoint_every and step % config.checkpoint_every == 0:
                root, ext = os.path.splitext(checkpoint_path)
                save_checkpoint(f"{root}_{step:06d}{ext or '.herm'}", model)
            if progress:
                progress(step, m)
    finally:
        if fh:
            fh.close()
    if checkpoint_path:
        save_checkpoint(checkpoint_path, model)
    return history


# ----------------------------------------------------------------- odometry

def sliding_window(timestamps, factors, window_size, prior=None, solver=None):
    """Generic sliding-window odometry.

    ``factors(ref, k)`` returns ``(z, r, W)`` matching frame ``k`` against
    reference frame ``ref`` (or None). The oldest frame of each window is
    locked; after a solve the window advances by one frame and the new frame
    is initialised by constant-velocity extrapolation. Returns
    ``(T_{k,0} list, velocities, failed flags)``.
    """
    stamps = np.asarray(timestamps, dtype=float)
    n = len(stamps)
    w = min(window_size, n)
    if n < 2:
        raise ValueError("need at least two frames")
    poses = [np.eye(4) for _ in range(n)]
    vels = np.zeros((n, 6))
    failed = np.zeros(n, dtype=bool)
    for tau in range(0, n - w + 1):
        idx = list(range(tau, tau + w))
        if tau > 0:
            j = idx[-1]
            poses[j], vels[j] = extrapolate(poses[j - 1], vels[j - 1], stamps[j] - stamps[j - 1])
        batches = []
        for local, k in enumerate(idx[1:], start=1):
            out = factors(tau, k)
            if out is not None and len(out[0]):
                batches.append(MeasurementBatch(local, *out))
        if not batches:
            # nothing observed: keep the extrapolation
            failed[idx[-1]] = True
            continue
        state = WindowState([poses[k] for k in idx], vels[idx], stamps[idx])
        try:
            post = solve_window(state, batches, prior, solver)
        except (SolverDiverged, SingularSystem) as exc:
            log.info("window at frame %d failed: %s", tau, exc)
            failed[idx[-1]] = True
            continue
        for local, k in enumerate(idx):
            if local > 0:
                poses[k] = post.mean.poses[local]
            vels[k] = post.mean.velocities[local]
    return poses, vels, failed


def frame_feature_sets(model, frames, config):
    """Eval-mode features for every frame, optionally log-det filtered."""
    out = []
    for f in frames:
        maps, _ = forward(model, f.image.pixels[None], training=False)
        fs = frame_features(maps, 0, f.valid_cells, model.arch, f.image.resolution, config.c)
        if config.use_eta_filter:
            fs = inference_filter(fs, config.eta)
        out.append(fs)
    return out


def run_odometry(model, scan_sequence, config, size=None, resolution=None):
    """World-frame trajectory (first frame at the origin) from a scan sequence.

    ``scan_sequence`` is a list of Frames, or of PolarScans together with
    ``size`` and ``resolution`` for the projection.
    """
    frames = scan_sequence
    if frames and not isinstance(frames[0], Frame):
        frames = prepare_frames(frames, size, resolution, model.arch.cell_size, config.beta,
                                config.min_valid_ratio, masking=not config.no_masking)
    if len(frames) < config.window_size:
        raise ValueError(f"need at least {config.window_size} scans")
    feats = frame_feature_sets(model, frames, config)
    T = model.arch.temperature

    def factors(ref, k):
        a, b = feats[ref], feats[k]
        if len(a) == 0 or len(b) == 0:
            return None
        ms = matching.match(b.descriptors, a.descriptors, a.keypoints, T)
        return b.keypoints, ms.points, b.weights

    stamps = [f.timestamp for f in frames]
    poses, _, failed = sliding_window(stamps, factors, config.window_size, config.prior, config.solver)
    return Trajectory(stamps, np.array([lie.inverse(P) for P in poses]), failed)


def run_oracle_odometry(world, gt, config, noise_std=0.05, max_range=None, seed=0):
    """Same estimator fed landmark correspondences instead of learned features."""
    from .simworld import oracle_correspondences

    def factors(ref, k):
        rng = np.random.default_rng([seed, ref, k])
        z, r, W = oracle_correspondences(world, gt.poses[ref], gt.poses[k], noise_std, rng, max_range, config.c)
        return (z, r, W) if len(z) else None

    poses, _, failed = sliding_window(gt.timestamps, factors, config.window_size, config.prior, config.solver)
    return Trajectory(gt.timestamps, np.array([lie.inverse(P) for P in poses]), failed)
