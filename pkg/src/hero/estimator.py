"""Sliding-window Gauss-Newton (MAP) solver over poses and body velocities.

Unknowns are the velocity of the locked first frame followed by
``(pose perturbation, velocity)`` of every later frame. Measurement factors
compare a keypoint ``z`` in frame k with its match ``r`` in the reference
frame through ``e = D(z - T_{k,0} T_{0,tau} r)``; Geman-McClure reweighting
is applied to them, never to the prior.
"""
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from . import lie
from .errors import SingularSystem, SolverDiverged
from .prior import PriorConfig, build_prior_factor, prior_error, prior_information


@dataclass
class WindowState:
    poses: list             # T_{k,0}, 4x4
    velocities: np.ndarray  # (w, 6)
    timestamps: np.ndarray  # (w,)

    def __post_init__(self):
        self.poses = [np.array(T, dtype=float) for T in self.poses]
        self.velocities = np.array(self.velocities, dtype=float).reshape(len(self.poses), 6)
        self.timestamps = np.asarray(self.timestamps, dtype=float)
        if len(self.poses) < 2:
            raise ValueError("a window needs at least two frames")
        if np.any(np.diff(self.timestamps) <= 0):
            raise ValueError("timestamps must be strictly increasing")

    @property
    def size(self):
        return len(self.poses)

    def copy(self):
        return WindowState([T.copy() for T in self.poses], self.velocities.copy(), self.timestamps.copy())

    def relative(self, k):
        """``T_{k,0} T_{0,tau}``: maps reference-frame points into frame k."""
        return self.poses[k] @ lie.inverse(self.poses[0])


@dataclass
class MeasurementFactor:
    z: np.ndarray      # homogeneous keypoint in frame k
    r: np.ndarray      # homogeneous match in the reference frame
    W: np.ndarray      # 3x3 weight
    frame: int


@dataclass
class MeasurementBatch:
    """All measurement factors of one frame, stacked."""
    frame: int
    z: np.ndarray  # (L, 4)
    r: np.ndarray  # (L, 4)
    W: np.ndarray  # (L, 3, 3)

    def __len__(self):
        return self.z.shape[0]


def group_factors(meas):
    """Normalize a list of MeasurementFactor / MeasurementBatch into batches per frame."""
    singles = {}
    batches = []
    for m in meas:
        if isinstance(m, MeasurementBatch):
            batches.append(m)
        else:
            singles.setdefault(m.frame, []).append(m)
    for k in sorted(singles):
        fs = singles[k]
        batches.append(MeasurementBatch(k, np.array([f.z for f in fs], dtype=float),
                                        np.array([f.r for f in fs], dtype=float),
                                        np.array([f.W for f in fs], dtype=float)))
    return batches


@dataclass
class SolverOptions:
    max_iterations: int = 20
    tolerance: float = 1e-6
    robust: bool = True
    max_halvings: int = 8
    max_increases: int = 5


@dataclass
class Posterior:
    mean: WindowState
    information: np.ndarray  # GN information over unlocked variables
    iterations: int
    cost: float
    robust_weights: list = field(default_factory=list)

    def covariance_blocks(self):
        """6x6 blocks along the diagonal of the inverse information."""
        c, low = _cholesky(self.information)
        n = self.information.shape[0]
        out = []
        for i in range(0, n, 6):
            E = np.zeros((n, 6))
            E[i:i + 6] = np.eye(6)
            out.append(scipy.linalg.cho_solve((c, low), E)[i:i + 6])
        return out

    def log_det_information(self):
        try:
            c, _ = _cholesky(self.information)
        except SingularSystem:
            return float("nan")
        return 2.0 * float(np.sum(np.log(np.diag(c))))


def measurement_error(T_tau, T_k, f):
    """e = D(z - T_{k,0} T_{0,tau} r) for one factor (3-vector)."""
    q = T_k @ lie.inverse(T_tau) @ np.asarray(f.r, dtype=float)
    return np.asarray(f.z, dtype=float)[:3] - q[:3]


def robust_weight(e, W):
    """Geman-McClure IRLS weight ``1 / (1 + u^2)^2`` with ``u^2 = e^T W e``."""
    u2 = float(e @ W @ e)
    return 1.0 / (1.0 + u2) ** 2


def _batch_terms(batch, T_rel):
    p = batch.r @ T_rel.T
    e = batch.z[:, :3] - p[:, :3]
    u2 = np.einsum("li,lij,lj->l", e, batch.W, e)
    return p, e, u2


def _gm_cost(u2):
    return 0.5 * u2 / (1.0 + u2)


def _cholesky(H):
    try:
        return scipy.linalg.cho_factor(H, lower=False, check_finite=True)
    except (np.linalg.LinAlgError, ValueError) as exc:
        raise SingularSystem(str(exc)) from exc


def _solve_spd(H, g):
    # symmetric diagonal scaling first: factor weights span many decades
    d = np.sqrt(np.diag(H))
    if np.any(~(d > 0)):
        raise SingularSystem("information matrix has a non-positive diagonal")
    c, low = _cholesky(H / np.outer(d, d))
    return scipy.linalg.cho_solve((c, low), g / d) / d


def _pose_col(k):
    return 6 + 12 * (k - 1)


def window_cost(state, batches, Qc, robust=True):
    cost = 0.0
    for k in range(1, state.size):
        dt = state.timestamps[k] - state.timestamps[k - 1]
        e = prior_error(state.poses[k - 1], state.velocities[k - 1], state.poses[k],
                        state.velocities[k], dt)
        cost += 0.5 * float(e @ prior_information(Qc, dt) @ e)
    for b in batches:
        if len(b) == 0:
            continue
        _, _, u2 = _batch_terms(b, state.relative(b.frame))
        cost += float(np.sum(_gm_cost(u2) if robust else 0.5 * u2))
    return cost


def _linearize(state, batches, Qc, robust):
    w = state.size
    n = 6 + 12 * (w - 1)
    H = np.zeros((n, n))
    g = np.zeros(n)
    weights = []
    for k in range(1, w):
        dt = state.timestamps[k] - state.timestamps[k - 1]
        f = build_prior_factor(state.poses[k - 1], state.velocities[k - 1],
                               state.poses[k], state.velocities[k], dt, Qc)
        if k - 1 == 0:
            cols = list(range(0, 6))
            Jp = f.jac_prev[:, 6:]
        else:
            c0 = _pose_col(k - 1)
            cols = list(range(c0, c0 + 12))
            Jp = f.jac_prev
        c1 = _pose_col(k)
        cols += list(range(c1, c1 + 12))
        J = np.hstack([Jp, f.jac_next])
        JtL = J.T @ f.information
        H[np.ix_(cols, cols)] += JtL @ J
        g[cols] += JtL @ f.error
    for b in batches:
        if len(b) == 0:
            weights.append(np.zeros(0))
            continue
        p, e, u2 = _batch_terms(b, state.relative(b.frame))
        rw = 1.0 / (1.0 + u2) ** 2 if robust else np.ones_like(u2)
        weights.append(rw)
        # de/d(delta) = -[I, -p^] = [-I, p^]
        J = np.zeros((len(b), 3, 6))
        J[:, :, :3] = -np.eye(3)
        px, py, pz = p[:, 0], p[:, 1], p[:, 2]
        J[:, 0, 4], J[:, 0, 5] = -pz, py
        J[:, 1, 3], J[:, 1, 5] = pz, -px
        J[:, 2, 3], J[:, 2, 4] = -py, px
        WJ = np.einsum("lij,ljk->lik", b.W, J) * rw[:, None, None]
        c = _pose_col(b.frame)
        H[c:c + 6, c:c + 6] += np.einsum("lji,ljk->ik", J, WJ)
        g[c:c + 6] += np.einsum("lji,lj->i", WJ, e)
    return H, g, weights


def _retract(state, delta, step):
    out = state.copy()
    out.velocities[0] += step * delta[0:6]
    for k in range(1, state.size):
        c = _pose_col(k)
        out.poses[k] = lie.exp_map(step * delta[c:c + 6]) @ state.poses[k]
        out.velocities[k] += step * delta[c + 6:c + 12]
    return out


def solve_window(state, meas, prior=None, opts=None):
    """Gauss-Newton with Geman-McClure reweighting and a halving line search.

    ``meas`` is a list of MeasurementFactor or MeasurementBatch. Returns a
    Posterior whose mean keeps ``state.poses[0]`` untouched.
    """
    prior = prior or PriorConfig()
    opts = opts or SolverOptions()
    Qc = prior.Qc
    batches = group_factors(meas)
    for b in batches:
        if not 1 <= b.frame < state.size:
            raise ValueError(f"measurement frame {b.frame} outside window")
    x = state.copy()
    cost = window_cost(x, batches, Qc, opts.robust)
    if not math.isfinite(cost):
        raise SolverDiverged("initial cost is not finite")
    increases = 0
    it = 0
    for it in range(1, opts.max_iterations + 1):
        H, g, _ = _linearize(x, batches, Qc, opts.robust)
        if not np.any(np.abs(g) > 1e-14 * (1.0 + np.abs(H).max())):
            break
        delta = -_solve_spd(H, g)
        if not np.all(np.isfinite(delta)):
            raise SolverDiverged("non-finite update")
        step = 1.0
        for _ in range(opts.max_halvings + 1):
            cand = _retract(x, delta, step)
            new_cost = window_cost(cand, batches, Qc, opts.robust)
            if math.isfinite(new_cost) and new_cost <= cost:
                break
            step *= 0.5
        if not math.isfinite(new_cost):
            raise SolverDiverged("cost became non-finite")
        increases = increases + 1 if new_cost > cost else 0
        if increases >= opts.max_increases:
            raise SolverDiverged(f"cost increased {increases} consecutive iterations")
        x, cost = cand, new_cost
        if step * np.linalg.norm(delta) < opts.tolerance:
            break
    H, _, weights = _linearize(x, batches, Qc, opts.robust)
    x.poses[0] = state.poses[0]
    return Posterior(x, H, it, cost, weights)


@dataclass
class LossTerms:
    prior: float
    measurement: float
    log_det_information: float

    @property
    def total(self):
        return self.prior + self.measurement + 0.5 * self.log_det_information


def esgvi_loss(posterior, meas, prior=None, include_log_det=True):
    """Loss functional evaluated at the posterior mean.

    Prior part ``sum 1/2 e^T Q^-1 e``, measurement part
    ``sum 1/2 e^T W e - ln|W|`` and ``1/2 ln|Sigma^-1|`` (reported only; it
    does not depend on the network parameters).
    """
    prior = prior or PriorConfig()
    x = posterior.mean
    p = 0.0
    for k in range(1, x.size):
        dt = x.timestamps[k] - x.timestamps[k - 1]
        p += build_prior_factor(x.poses[k - 1], x.velocities[k - 1], x.poses[k],
                                x.velocities[k], dt, prior.Qc).cost
    m = 0.0
    for b in group_factors(meas):
        if len(b) == 0:
            continue
        _, _, u2 = _batch_terms(b, x.relative(b.frame))
        logdet = np.linalg.slogdet(b.W)[1]
        m += float(np.sum(0.5 * u2 - logdet))
    ld = posterior.log_det_information() if include_log_det else 0.0
    return LossTerms(p, m, ld)


def extrapolate(T, w, dt):
    """Constant-velocity prediction of the next state."""
    return lie.exp_map(dt * np.asarray(w)) @ T, np.array(w, dtype=float)
