"""White-noise-on-acceleration motion prior between consecutive states.

A state is ``(T, w)``: pose ``T = T_{k,0}`` and body velocity ``w`` with
``dT/dt = w^ T``. For ``xi = log(T_next T_prev^-1)`` the error is

    e = [ xi - dt * w_prev ;  J_l^-1(xi) w_next - w_prev ]

with covariance ``Q_k = [[dt^3/3 Qc, dt^2/2 Qc], [dt^2/2 Qc, dt Qc]]``.
"""
from dataclasses import dataclass

import numpy as np

from . import lie

DEFAULT_QC = (1.0, 1.0, 1.0, 0.1, 0.1, 0.1)


@dataclass
class PriorConfig:
    qc_diag: tuple = DEFAULT_QC

    def __post_init__(self):
        q = np.asarray(self.qc_diag, dtype=float)
        if q.shape != (6,) or np.any(q <= 0):
            raise ValueError("Qc must be a diagonal of 6 positive entries")

    @property
    def Qc(self):
        return np.diag(np.asarray(self.qc_diag, dtype=float))


@dataclass
class PriorFactor:
    error: np.ndarray        # (12,)
    information: np.ndarray  # (12, 12)
    jac_prev: np.ndarray     # (12, 12) w.r.t. (pose perturbation, velocity) of x_prev
    jac_next: np.ndarray     # (12, 12) w.r.t. x_next

    @property
    def cost(self):
        return 0.5 * float(self.error @ self.information @ self.error)


def prior_covariance(Qc, dt):
    if dt <= 0:
        raise ValueError("dt must be positive")
    Qc = np.asarray(Qc, dtype=float)
    return np.block([[dt**3 / 3.0 * Qc, dt**2 / 2.0 * Qc],
                     [dt**2 / 2.0 * Qc, dt * Qc]])


def prior_information(Qc, dt):
    """Closed-form inverse of ``prior_covariance``."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    Qi = np.linalg.inv(np.asarray(Qc, dtype=float))
    return np.block([[12.0 / dt**3 * Qi, -6.0 / dt**2 * Qi],
                     [-6.0 / dt**2 * Qi, 4.0 / dt * Qi]])


def prior_error(T_prev, w_prev, T_next, w_next, dt):
    xi = lie.log_map(T_next @ lie.inverse(T_prev))
    w_prev = np.asarray(w_prev, dtype=float)
    return np.concatenate([xi - dt * w_prev, lie.se3_left_jacobian_inv(xi) @ w_next - w_prev])


def prior_jacobians(T_prev, w_prev, T_next, w_next, dt):
    """Jacobians of ``prior_error`` w.r.t. left pose perturbations and velocities.

    Columns are ordered ``(delta_pose (6), delta_velocity (6))`` per state.
    """
    T_rel = T_next @ lie.inverse(T_prev)
    xi = lie.log_map(T_rel)
    Jinv = lie.se3_left_jacobian_inv(xi)
    dxi_next = Jinv
    dxi_prev = -Jinv @ lie.adjoint(T_rel)
    dvel_dxi = lie.jl_inv_times_jacobian(xi, w_next)
    I = np.eye(6)
    Jp = np.zeros((12, 12))
    Jn = np.zeros((12, 12))
    Jp[:6, :6] = dxi_prev
    Jp[:6, 6:] = -dt * I
    Jp[6:, :6] = dvel_dxi @ dxi_prev
    Jp[6:, 6:] = -I
    Jn[:6, :6] = dxi_next
    Jn[6:, :6] = dvel_dxi @ dxi_next
    Jn[6:, 6:] = Jinv
    return Jp, Jn


def build_prior_factor(T_prev, w_prev, T_next, w_next, dt, Qc):
    e = prior_error(T_prev, w_prev, T_next, w_next, dt)
    Jp, Jn = prior_jacobians(T_prev, w_prev, T_next, w_next, dt)
    return PriorFactor(e, prior_information(Qc, dt), Jp, Jn)
