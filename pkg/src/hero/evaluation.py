"""Trajectory files and KITTI-style drift metrics."""
import csv
import math
from dataclasses import dataclass, field

import numpy as np

from . import lie
from .errors import TooShort

KITTI_LENGTHS = tuple(range(100, 801, 100))
SCALED_LENGTHS = tuple(range(10, 81, 10))
_LENGTH_EPS = 1e-9


@dataclass
class Trajectory:
    timestamps: np.ndarray
    poses: np.ndarray  # (n, 4, 4) world-from-sensor
    flags: np.ndarray = None  # True where the pose was dead-reckoned

    def __post_init__(self):
        self.timestamps = np.asarray(self.timestamps, dtype=np.float64)
        self.poses = np.asarray(self.poses, dtype=np.float64).reshape(-1, 4, 4)
        if len(self.timestamps) != len(self.poses):
            raise ValueError("one pose per timestamp required")
        if np.any(np.diff(self.timestamps) <= 0):
            raise ValueError("timestamps must be strictly increasing")
        if self.flags is None:
            self.flags = np.zeros(len(self.timestamps), dtype=bool)

    def __len__(self):
        return len(self.timestamps)


def write_trajectory(path, traj):
    rows = np.column_stack([traj.timestamps, traj.poses[:, :3, :4].reshape(-1, 12)])
    np.savetxt(path, rows, fmt="%.9e")


def read_trajectory(path):
    rows = np.atleast_2d(np.loadtxt(path, dtype=np.float64))
    if rows.shape[1] != 13:
        raise ValueError(f"{path}: expected 13 columns, found {rows.shape[1]}")
    poses = np.tile(np.eye(4), (len(rows), 1, 1))
    poses[:, :3, :4] = rows[:, 1:].reshape(-1, 3, 4)
    return Trajectory(rows[:, 0], poses)


GT_HEADER = ["timestamp", "x", "y", "yaw", "vx", "vy", "vyaw"]


def write_groundtruth(path, gt):
    """``groundtruth.csv`` rows; velocities are the vehicle's own body rates."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(GT_HEADER)
        for t, P, v in zip(gt.timestamps, gt.poses, gt.velocities):
            x, y, yaw = lie.pose_xy_yaw(P)
            w.writerow([f"{t:.9e}", f"{x:.9e}", f"{y:.9e}", f"{yaw:.9e}",
                        f"{-v[0]:.9e}", f"{-v[1]:.9e}", f"{-v[5]:.9e}"])


def read_groundtruth(path):
    """Returns (Trajectory, velocities (n, 3) as vx, vy, vyaw)."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if [h.strip() for h in header] != GT_HEADER:
            raise ValueError(f"{path}: unexpected header {header}")
        rows = np.array([[float(x) for x in r] for r in reader if r])
    poses = np.array([lie.planar_pose(x, y, yaw) for x, y, yaw in rows[:, 1:4]])
    return Trajectory(rows[:, 0], poses), rows[:, 4:7]


def associate(est, gt):
    """Index pairs matching each gt stamp to the nearest est stamp within dt/2."""
    dt = np.median(np.diff(gt.timestamps)) if len(gt) > 1 else np.inf
    j = np.searchsorted(est.timestamps, gt.timestamps)
    j0 = np.clip(j - 1, 0, len(est) - 1)
    j1 = np.clip(j, 0, len(est) - 1)
    pick = np.where(np.abs(est.timestamps[j0] - gt.timestamps) <= np.abs(est.timestamps[j1] - gt.timestamps),
                    j0, j1)
    ok = np.abs(est.timestamps[pick] - gt.timestamps) <= dt / 2
    return pick[ok], np.flatnonzero(ok)


@dataclass
class DriftReport:
    translational_error: float  # percent
    rotational_error: float     # 1e-3 deg / m
    per_length: dict = field(default_factory=dict)  # L -> (percent, 1e-3 deg/m, count)
    segments: int = 0

    def to_dict(self):
        return {"translational_error": self.translational_error,
                "rotational_error": self.rotational_error,
                "segments": self.segments,
                "per_length": {str(k): {"translational_error": v[0], "rotational_error": v[1], "count": v[2]}
                               for k, v in self.per_length.items()}}


def path_lengths(poses):
    steps = np.linalg.norm(np.diff(poses[:, :3, 3], axis=0), axis=1)
    return np.concatenate([[0.0], np.cumsum(steps)])


def rotation_angle(R):
    return math.acos(max(-1.0, min(1.0, 0.5 * (np.trace(R[:3, :3]) - 1.0))))


def kitti_drift(est, gt, lengths=KITTI_LENGTHS):
    """Average relative drift over every (start frame, length) sub-sequence.

    The end frame of a sub-sequence is the first one whose accumulated
    groundtruth path length reaches ``L``.
    """
    lengths = tuple(float(L) for L in lengths)
    ie, ig = associate(est, gt)
    E, G = est.poses[ie], gt.poses[ig]
    dist = path_lengths(G)
    if len(dist) == 0 or dist[-1] < min(lengths) - _LENGTH_EPS:
        raise TooShort(f"groundtruth path {dist[-1] if len(dist) else 0:.3f} m is shorter than {min(lengths)} m")
    Ginv = np.array([lie.inverse(P) for P in G])
    Einv = np.array([lie.inverse(P) for P in E])
    acc = {L: [] for L in lengths}
    for i in range(len(G)):
        for L in lengths:
            j = int(np.searchsorted(dist, dist[i] + L - _LENGTH_EPS))
            if j >= len(G):
                continue
            d_gt = Ginv[i] @ G[j]
            d_est = Einv[i] @ E[j]
            err = lie.inverse(d_gt) @ d_est
            acc[L].append((np.linalg.norm(err[:3, 3]) / L, rotation_angle(err) / L))
    per = {}
    t_all, r_all = [], []
    for L in lengths:
        if not acc[L]:
            continue
        a = np.array(acc[L])
        t_all.append(a[:, 0])
        r_all.append(a[:, 1])
        per[int(L) if L.is_integer() else L] = (100.0 * a[:, 0].mean(), 1e3 * math.degrees(1) * a[:, 1].mean(), len(a))
    t = np.concatenate(t_all)
    r = np.concatenate(r_all)
    return DriftReport(100.0 * float(t.mean()), 1e3 * math.degrees(float(r.mean())), per, len(t))


def parse_lengths(spec):
    """``"10:80:10"`` -> (10, 20, ..., 80); also accepts comma lists."""
    if ":" in spec:
        a, b, s = (float(x) for x in spec.split(":"))
        n = int(math.floor((b - a) / s + 1e-9)) + 1
        vals = [a + i * s for i in range(n)]
    else:
        vals = [float(x) for x in spec.split(",") if x.strip()]
    if not vals or any(v <= 0 for v in vals):
        raise ValueError(f"bad length specification {spec!r}")
    return tuple(int(v) if float(v).is_integer() else v for v in vals)
